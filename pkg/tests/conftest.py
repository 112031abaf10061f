from __future__ import annotations

import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from verdict_shift.manifest import SampleRecord, write_manifest


def make_records(n: int, prefix: str = "s", image_dir: Path | None = None) -> list[SampleRecord]:
    recs = []
    for i in range(n):
        image = str(image_dir / f"{i % 7}.png") if image_dir else f"images/{i % 7}.png"
        recs.append(
            SampleRecord(
                id=f"{prefix}{i:04d}",
                image_path=image,
                question=f"What is shown in picture {i}?",
                answer=f"object number {i}",
            )
        )
    return recs


@pytest.fixture
def records_factory():
    return make_records


@pytest.fixture
def manifest_file(tmp_path):
    def _make(records, name="manifest.jsonl"):
        path = tmp_path / name
        write_manifest(records, path)
        return path

    return _make


@pytest.fixture
def image_dir(tmp_path):
    d = tmp_path / "images"
    d.mkdir()
    for i in range(7):
        # tiny fake payloads; the evaluator never decodes them
        (d / f"{i}.png").write_bytes(b"\x89PNG\r\n\x1a\n" + bytes([i]) * 16)
    return d


def chat_response(top: list[tuple[str, float]]) -> dict:
    return {
        "id": "cmpl-test",
        "object": "chat.completion",
        "choices": [
            {
                "index": 0,
                "message": {"role": "assistant", "content": top[0][0] if top else ""},
                "logprobs": {
                    "content": [
                        {
                            "token": top[0][0] if top else "",
                            "logprob": top[0][1] if top else 0.0,
                            "top_logprobs": [{"token": t, "logprob": lp} for t, lp in top],
                        }
                    ]
                },
                "finish_reason": "length",
            }
        ],
    }


class FakeEndpoint:
    """Local HTTP server that records every request body and answers via ``responder``."""

    def __init__(self) -> None:
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        self.lock = threading.Lock()
        self.responder = lambda body: (
            200,
            chat_response([("Yes", math.log(0.6)), ("No", math.log(0.3))]),
        )
        endpoint = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                with endpoint.lock:
                    endpoint.requests.append(body)
                    endpoint.headers.append(dict(self.headers))
                status, payload = endpoint.responder(body)
                data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/v1/chat/completions"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def fake_endpoint():
    ep = FakeEndpoint()
    yield ep
    ep.close()


@pytest.fixture
def closed_port_url():
    import socket

    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    return f"http://127.0.0.1:{port}/v1/chat/completions"


# acceptance criteria report -------------------------------------------------

_criteria: list[tuple[str, str, float]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria.append((marker.args[0], report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, duration in _criteria:
        tag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{tag}] {name} ({duration:.2f}s)")


def write_mock_table(path: Path, records, passing: set[str], seed: int = 0) -> Path:
    """Mock table where exactly the ``passing`` ids satisfy the alignment filter.

    Prior probabilities vary per sample so that rankings have few ties.
    """
    import random

    rnd = random.Random(seed)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            prior_yes = rnd.uniform(0.2, 0.6)
            prior_no = rnd.uniform(0.2, 0.6)
            lift = rnd.uniform(1.05, 1.6)
            if rec.id in passing:
                full_yes, full_no = prior_yes * lift, prior_no / lift
            else:
                # fail on one side of the filter or the other
                if rnd.random() < 0.5:
                    full_yes, full_no = prior_yes / lift, prior_no / lift
                else:
                    full_yes, full_no = prior_yes * lift, prior_no * lift
            for context, (py, pn) in (("full", (full_yes, full_no)), ("prior", (prior_yes, prior_no))):
                fh.write(json.dumps({"id": rec.id, "context": context, "p_yes": py, "p_no": pn}) + "\n")
    return path
