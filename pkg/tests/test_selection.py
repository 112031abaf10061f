import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from verdict_shift.errors import ConfigError, DataError
from verdict_shift.scoring import CvsScore
from verdict_shift.selection import (
    SelectionConfig,
    Strategy,
    filter_aligned,
    retention_fraction,
    select,
)


def sc(sid, cvs_yes, cvs_no=-1.0):
    # fields beyond the two scores do not influence filtering or ranking
    return CvsScore(sid, 0.5, 0.5, 0.5, 0.5, cvs_yes, cvs_no)


def predicate(s, ty=0.0, tn=0.0):
    return s.cvs_yes > ty and s.cvs_no < tn


def oracle_select(scores, strategy, k, ty=0.0, tn=0.0):
    """Repeated extraction of the best remaining element; no library sort."""
    if strategy in (Strategy.LOW, Strategy.HIGH):
        pool = [s for s in scores if predicate(s, ty, tn)]
    else:
        pool = list(scores)

    def better(a, b):
        if strategy is Strategy.LOW:
            ka, kb = a.cvs_yes, b.cvs_yes
        elif strategy is Strategy.HIGH:
            ka, kb = -a.cvs_yes, -b.cvs_yes
        else:
            ka, kb = -a.cvs_no, -b.cvs_no
        return ka < kb or (ka == kb and a.sample_id < b.sample_id)

    out = []
    while pool and len(out) < k:
        best = pool[0]
        for cand in pool[1:]:
            if better(cand, best):
                best = cand
        out.append(best.sample_id)
        pool.remove(best)
    return out


# filter ---------------------------------------------------------------------

def test_filter_examples():
    assert filter_aligned([sc("a", 0.7, -1.2)]) != []
    assert filter_aligned([sc("a", 0.0, -0.5)]) == []
    assert filter_aligned([sc("a", 0.3, 0.1)]) == []


def test_filter_sign_grid():
    values = (-1.0, 0.0, 1.0)
    grid = [sc(f"{y}_{n}", y, n) for y, n in itertools.product(values, values)]
    kept = {s.sample_id for s in filter_aligned(grid)}
    expected = {s.sample_id for s in grid if s.cvs_yes > 0 and s.cvs_no < 0}
    assert kept == expected == {"1.0_-1.0"}


def test_filter_preserves_order_and_custom_thresholds():
    scores = [sc("c", 0.5, -0.5), sc("a", 0.05, -0.5), sc("b", 0.9, -0.05)]
    assert [s.sample_id for s in filter_aligned(scores)] == ["c", "a", "b"]
    assert [s.sample_id for s in filter_aligned(scores, 0.1, -0.1)] == ["c"]


# select -----------------------------------------------------------------------

POOL5 = [sc("s1", 0.1), sc("s2", 0.5), sc("s3", 0.9), sc("s4", -0.2), sc("s5", 0.4, 0.3)]


def test_low_and_high_examples_over_insertion_orders():
    for perm in itertools.permutations(POOL5):
        low = select(list(perm), SelectionConfig(Strategy.LOW, budget_count=2))
        high = select(list(perm), SelectionConfig(Strategy.HIGH, budget_count=2))
        assert low.selected_ids == oracle_select(perm, Strategy.LOW, 2) == ["s1", "s2"]
        assert high.selected_ids == oracle_select(perm, Strategy.HIGH, 2) == ["s3", "s2"]
        assert low.filtered_pool_size == 3


def test_tie_break_by_id():
    r = select([sc("b", 0.3), sc("a", 0.3)], SelectionConfig(Strategy.LOW, budget_count=1))
    assert r.selected_ids == ["a"]


def test_no_strategy_ranks_unfiltered_pool():
    pool = [sc("a", -1.0, 2.0), sc("b", 0.5, -1.0), sc("c", -0.5, 0.5)]
    r = select(pool, SelectionConfig(Strategy.NO, budget_count=2))
    assert r.selected_ids == ["a", "c"]
    assert r.filtered_pool_size == 1


def test_random_full_budget_is_seeded_permutation():
    pool = [sc(f"s{i}", 0.1 * i) for i in range(20)]
    cfg = SelectionConfig(Strategy.RANDOM, budget_count=20, rng_seed=7)
    a = select(pool, cfg)
    b = select(list(reversed(pool)), cfg)
    assert sorted(a.selected_ids) == sorted(s.sample_id for s in pool)
    assert a.selected_ids == b.selected_ids
    assert a.selected_ids != sorted(a.selected_ids)
    other = select(pool, SelectionConfig(Strategy.RANDOM, budget_count=20, rng_seed=8))
    assert other.selected_ids != a.selected_ids


def test_mask_and_budget_consistency():
    r = select(POOL5, SelectionConfig(Strategy.LOW, budget_count=10))
    assert r.selected_ids == ["s1", "s2", "s3"]
    assert sum(r.mask.values()) == 3 == r.budget_effective
    assert set(r.mask) == {s.sample_id for s in POOL5}
    assert r.warnings


def test_empty_filtered_pool_warns():
    r = select([sc("a", -1.0), sc("b", 0.0)], SelectionConfig(Strategy.HIGH, budget_count=1))
    assert r.selected_ids == [] and r.warnings
    assert sum(r.mask.values()) == 0


@pytest.mark.parametrize(
    "kwargs",
    [
        {"budget_count": 0},
        {"budget_count": -3},
        {"budget_ratio": 0.0},
        {"budget_ratio": 1.5},
        {},
        {"budget_count": 3, "budget_ratio": 0.5},
        {"budget_count": 1, "strategy": "medium"},
        {"budget_count": 1, "yes_threshold": float("nan")},
    ],
)
def test_config_errors(kwargs):
    with pytest.raises(ConfigError):
        SelectionConfig(**kwargs)


@pytest.mark.parametrize("ratio, n, k", [(0.1, 1000, 100), (0.05, 10, 1), (0.15, 7, 1), (1.0, 7, 7), (0.5, 0, 0)])
def test_ratio_budget(ratio, n, k):
    assert SelectionConfig(budget_ratio=ratio).resolve_budget(n) == k


def test_duplicate_ids_rejected():
    with pytest.raises(DataError):
        select([sc("a", 0.1), sc("a", 0.2)], SelectionConfig(budget_count=1))


def test_retention_fraction():
    scores = [sc(f"p{i}", 0.2, -0.2) for i in range(600)] + [sc(f"f{i}", -0.2, -0.2) for i in range(400)]
    assert retention_fraction(scores) == 0.6
    assert retention_fraction(scores[:600]) == 1.0
    with pytest.raises(DataError):
        retention_fraction([])


# properties -----------------------------------------------------------------------

_val = st.sampled_from([-1.0, -0.5, 0.0, 0.25, 0.5, 1.0]) | st.floats(-5, 5)


@st.composite
def pools(draw):
    n = draw(st.integers(1, 25))
    ids = draw(st.lists(st.text("abcdef", min_size=1, max_size=4), min_size=n, max_size=n, unique=True))
    return [sc(i, draw(_val), draw(_val)) for i in ids]


@settings(max_examples=150, deadline=None)
@given(pools(), st.sampled_from([Strategy.LOW, Strategy.HIGH, Strategy.NO]), st.randoms())
def test_select_matches_oracle_permutation_invariant_and_nested(pool, strategy, rnd):
    shuffled = list(pool)
    rnd.shuffle(shuffled)
    previous = []
    for k in range(1, len(pool) + 1):
        r = select(pool, SelectionConfig(strategy, budget_count=k))
        assert r.selected_ids == oracle_select(pool, strategy, k)
        assert select(shuffled, SelectionConfig(strategy, budget_count=k)).selected_ids == r.selected_ids
        assert r.selected_ids[: len(previous)] == previous
        assert len(r.selected_ids) <= k
        assert len(set(r.selected_ids)) == len(r.selected_ids)
        if strategy is not Strategy.NO:
            assert all(predicate(s) for s in pool if s.sample_id in set(r.selected_ids))
        previous = r.selected_ids


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.floats(0.01, 1.0), st.sampled_from(list(Strategy)), st.integers(0, 2**32))
def test_probability_scale_leaves_selection_unchanged(n, k, strategy, seed):
    rnd = random.Random(seed)
    base, scaled = [], []
    for i in range(n):
        probs = [rnd.uniform(0.01, 1.0) for _ in range(4)]
        base.append(CvsScore.from_probs(f"s{i}", *probs))
        scaled.append(CvsScore.from_probs(f"s{i}", *(p * k for p in probs)))
    for a, b in zip(base, scaled):
        assert a.cvs_yes == pytest.approx(b.cvs_yes, abs=1e-12)
    cfg = SelectionConfig(strategy, budget_count=max(1, n // 2), rng_seed=3)
    assert select(base, cfg).selected_ids == select(scaled, cfg).selected_ids
