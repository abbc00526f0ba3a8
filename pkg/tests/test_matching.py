import json
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from conftest import random_dataset
from smatch.dataset import Dataset
from smatch.errors import InputError
from smatch.matching import (
    MatchingResult,
    MatchSpec,
    brute_force_match,
    match_all_pivots,
    match_units,
    reduce_scores_pca,
    select_best_pivot,
)
from smatch.scores import KnownDensityModel, ScoreTable, fit_multinomial_logit, score_table


def table(d, values, pivot=0):
    return ScoreTable(d.ids, pivot, d.levels, np.asarray(values, dtype=float).reshape(d.n, -1))


def oracle_match(d, values, anchor, k):
    """Exhaustive scan with replacement: (anchor id -> arm -> [(id, sq_dist)])."""
    rows = {uid: [float(v) for v in values[i]] for i, uid in enumerate(d.ids)}
    arm_of = {uid: int(d.treatment[i]) for i, uid in enumerate(d.ids)}
    out = {}
    for a in sorted(uid for uid in d.ids if arm_of[uid] == anchor):
        per = {}
        for arm in range(d.k):
            if arm == anchor:
                continue
            cands = []
            for c in sorted(uid for uid in d.ids if arm_of[uid] == arm):
                s = 0.0
                for u, v in zip(rows[a], rows[c]):
                    s += (u - v) * (u - v)
                cands.append((s, c))
            cands.sort()
            per[arm] = [(c, s) for s, c in cands[:k]]
        out[a] = per
    return out


def as_plain(result):
    return {g.anchor: {a: list(ms) for a, ms in g.matches.items()} for g in result.groups}


# -- basic examples -------------------------------------------------------------


def test_closer_point_wins():
    d3 = Dataset.from_arrays(np.zeros((4, 1)), ["t1", "t2", "t2", "t3"], ids=["a", "b", "c", "z"])
    tab = table(d3, [[0.2, 0.0], [0.0, 0.0], [1.0, 1.0], [5.0, 5.0]])
    res = match_units(d3, tab, MatchSpec(pivot="t1"))
    (g,) = res.groups
    uid, dist = g.matches[1][0]
    assert uid == "b"
    assert dist == pytest.approx(0.04, abs=1e-15)


def test_ties_go_to_smaller_id():
    d = Dataset.from_arrays(np.zeros((3, 1)), ["A", "B", "B"], ids=["anc", "zz", "aa"])
    res = match_units(d, table(d, [[0.0], [1.0], [-1.0]]), MatchSpec())
    assert res.groups[0].matches[1] == (("aa", 1.0),)


def test_one_to_k_sorted_ascending(rng):
    d = random_dataset(rng, 60, 3)
    res = match_units(d, table(d, rng.normal(size=(60, 2))), MatchSpec(neighbors_per_arm=3))
    for g in res.groups:
        for ms in g.matches.values():
            dists = [x for _, x in ms]
            assert len(ms) == 3 and dists == sorted(dists)


def test_missing_score_rejected(rng):
    d = random_dataset(rng, 10, 2)
    tab = ScoreTable(d.ids[:-1], 0, d.levels, np.zeros((9, 1)))
    with pytest.raises(InputError, match="missing score"):
        match_units(d, tab, MatchSpec())


def test_spec_validation():
    with pytest.raises(InputError):
        MatchSpec(neighbors_per_arm=0)
    with pytest.raises(InputError):
        MatchSpec(caliper=-1.0)
    with pytest.raises(InputError):
        MatchSpec(metric="cosine")


# -- oracle equivalence ------------------------------------------------------------


@pytest.mark.parametrize("search", ["scan", "kdtree", "brute"])
def test_matches_exhaustive_oracle(search):
    rng = np.random.default_rng(12)
    d = random_dataset(rng, 200, 3)
    vals = rng.normal(size=(200, 2))
    res = match_units(d, table(d, vals), MatchSpec(), search=search)
    assert as_plain(res) == oracle_match(d, vals, 0, 1)
    assert res.unmatched == ()


def test_oracle_with_ties_and_one_to_k():
    rng = np.random.default_rng(13)
    d = random_dataset(rng, 120, 4)
    vals = rng.integers(-2, 3, size=(120, 3)).astype(float)  # many exact ties
    for search in ("scan", "kdtree"):
        res = match_units(d, table(d, vals), MatchSpec(anchor_arm=2, neighbors_per_arm=2), search=search)
        assert as_plain(res) == oracle_match(d, vals, 2, 2)


def test_brute_force_helper_agrees():
    rng = np.random.default_rng(14)
    d = random_dataset(rng, 80, 2)
    tab = table(d, rng.normal(size=(80, 1)))
    assert brute_force_match(d, tab, MatchSpec()) == match_units(d, tab, MatchSpec())
    with pytest.raises(InputError):
        brute_force_match(d, tab, MatchSpec(with_replacement=False))


def test_ratio_metric():
    d = Dataset.from_arrays(np.zeros((3, 1)), ["A", "B", "B"], ids=["a", "b", "c"])
    # log distances favour b (1.35 vs 2.25), ratio distances favour c (4.84 vs 0.60)
    vals = [[0.0], [math.log(3.2)], [-1.5]]
    assert match_units(d, table(d, vals), MatchSpec(metric="log")).groups[0].matches[1][0][0] == "b"
    ratio = match_units(d, table(d, vals), MatchSpec(metric="ratio")).groups[0].matches[1][0]
    assert ratio[0] == "c" and ratio[1] == pytest.approx((1 - math.exp(-1.5)) ** 2)
    assert match_units(d, table(d, [[0.0], [math.log(1.5)], [-3.0]]), MatchSpec(metric="ratio")).groups[0].matches[1][0][0] == "b"


# -- invariants over random instances ----------------------------------------------


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(seed=st.integers(0, 10_000), k=st.integers(2, 4), repl=st.booleans(), nb=st.integers(1, 2))
def test_result_invariants(seed, k, repl, nb):
    rng = np.random.default_rng(seed)
    d = random_dataset(rng, 40, k)
    vals = np.round(rng.normal(size=(40, k - 1)), 1)
    res = match_units(d, table(d, vals), MatchSpec(with_replacement=repl, neighbors_per_arm=nb))
    anchors = sorted(d.ids[i] for i in d.arm_indices(0))
    seen = sorted([g.anchor for g in res.groups] + [u for u, _ in res.unmatched])
    assert seen == anchors
    for g in res.groups:
        assert sorted(g.matches) == list(range(1, k))
        for ms in g.matches.values():
            assert len(ms) == nb and all(x >= 0 for _, x in ms)
    if not repl:
        for a in range(1, k):
            used = [u for g in res.groups for u in g.ids_for(a)]
            assert len(used) == len(set(used))
        assert all(reason == "pool exhausted" for _, reason in res.unmatched)


def test_without_replacement_greedy_order():
    # anchor "b" is an exact tie with candidate "y" so it goes first and takes it
    d = Dataset.from_arrays(np.zeros((4, 1)), ["A", "A", "B", "B"], ids=["a", "b", "x", "y"])
    vals = [[0.9], [1.0], [0.0], [1.0]]
    res = match_units(d, table(d, vals), MatchSpec(with_replacement=False))
    got = {g.anchor: g.matches[1][0][0] for g in res.groups}
    assert got == {"a": "x", "b": "y"}


def test_pool_exhausted():
    d = Dataset.from_arrays(np.zeros((3, 1)), ["A", "A", "B"], ids=["a", "b", "x"])
    res = match_units(d, table(d, [[0.0], [5.0], [0.1]]), MatchSpec(with_replacement=False))
    assert [g.anchor for g in res.groups] == ["a"]
    assert res.unmatched == (("b", "pool exhausted"),)


def test_caliper_rejects_whole_group():
    d = Dataset.from_arrays(np.zeros((3, 1)), ["A", "B", "C"], ids=["a", "b", "c"])
    vals = [[0.0, 0.0], [0.1, 0.0], [0.0, 3.0]]
    res = match_units(d, table(d, vals), MatchSpec(caliper=1.0))
    assert res.groups == () and res.unmatched == (("a", "caliper"),)
    assert len(match_units(d, table(d, vals), MatchSpec(caliper=3.0)).groups) == 1


@pytest.mark.parametrize("repl", [True, False])
def test_caliper_monotone(repl):
    rng = np.random.default_rng(15)
    d = random_dataset(rng, 150, 3)
    tab = table(d, rng.normal(size=(150, 2)))
    counts = [len(match_units(d, tab, MatchSpec(caliper=c, with_replacement=repl)).groups) for c in (2.0, 1.0, 0.5, 0.25, 0.1, 0.0)]
    assert counts == sorted(counts, reverse=True)
    assert counts[-1] == 0


def test_exact_ties_dominate(rng):
    d = random_dataset(rng, 90, 3)
    vals = rng.normal(size=(90, 2))
    anchors = d.arm_indices(0)
    for arm in (1, 2):
        vals[d.arm_indices(arm)[0]] = vals[anchors[0]]
    res = match_units(d, table(d, vals), MatchSpec())
    g = next(g for g in res.groups if g.anchor == d.ids[anchors[0]])
    assert all(ms[0][1] == 0.0 for ms in g.matches.values())
    assert len(match_units(d, table(d, vals), MatchSpec(caliper=0.0)).groups) >= 1


def test_dump_round_trip(rng, tmp_path):
    d = random_dataset(rng, 50, 3)
    res = match_units(d, table(d, rng.normal(size=(50, 2))), MatchSpec(caliper=0.5, with_replacement=False))
    text = json.dumps(res.to_dict())
    back = MatchingResult.from_dict(json.loads(text), d)
    assert back == res and back.spec == res.spec
    lines = res.to_csv().splitlines()
    assert lines[0] == "anchor_id,arm,match_id,distance"
    assert len(lines) == 1 + 2 * len(res.groups)
    with pytest.raises(InputError, match="malformed"):
        MatchingResult.from_dict({"levels": ["a0", "a1", "a2"]}, d)


def test_summary_counts():
    d = Dataset.from_arrays(np.zeros((4, 1)), ["A", "A", "A", "B"], ids=["a", "b", "c", "x"])
    res = match_units(d, table(d, [[0.0], [0.1], [0.2], [0.0]]), MatchSpec())
    assert res.summary == {"B": {"matches": 3, "distinct_units": 1, "max_reuse": 3}}


# -- all pivots and best-set selection --------------------------------------------------


def test_two_arms_pivot_results_identical(rng):
    d = random_dataset(rng, 80, 2)
    tab = table(d, rng.normal(size=(80, 1)))
    (_, r0), (_, r1) = match_all_pivots(d, tab, MatchSpec())
    assert r0 == r1


def test_three_arm_all_pivots_valid(rng):
    d = random_dataset(rng, 90, 3)
    m = fit_multinomial_logit(d)
    results = match_all_pivots(d, lambda piv: score_table(m, d, piv), MatchSpec(anchor_arm=1))
    assert [p.index for p, _ in results] == [0, 1, 2]
    for p, r in results:
        assert r.spec.pivot == p and r.spec.anchor_arm.index == 1
        assert len(r.groups) == d.arm_sizes()[1]


def test_exact_tie_dataset_zero_distances(rng):
    base = rng.normal(size=(10, 2))
    X = np.vstack([base, base, base])
    d = Dataset.from_arrays(X, [0] * 10 + [1] * 10 + [2] * 10)
    m = KnownDensityModel.normal([[0, 0], [1, 0], [0, 1]], [1.0] * 3, labels=d_labels(d))
    for _, r in match_all_pivots(d, lambda piv: score_table(m, d, piv), MatchSpec()):
        assert all(x == 0.0 for g in r.groups for ms in g.matches.values() for _, x in ms)


def d_labels(d):
    return [lev.label for lev in d.levels]


def test_provider_mapping_and_table_agree(rng):
    d = random_dataset(rng, 60, 3)
    tab = table(d, rng.normal(size=(60, 2)))
    mapping = {lev: tab.transform(lev.index) for lev in d.levels}
    a = match_all_pivots(d, tab, MatchSpec())
    b = match_all_pivots(d, mapping, MatchSpec())
    assert [r for _, r in a] == [r for _, r in b]


def _fake_result(d, matched_ids, pivot):
    from smatch.matching import MatchedGroup

    spec = MatchSpec(pivot=pivot, anchor_arm=0).resolved(d)
    groups = tuple(MatchedGroup(f"g{i}", {1: ((uid, 0.0),)}) for i, uid in enumerate(matched_ids))
    return (spec.pivot, MatchingResult(groups, (), spec, d.levels))


def test_select_best_smaller_norm():
    X = [[0.0], [0.0], [0.3], [0.7]]
    d = Dataset.from_arrays(X, ["A", "A", "B", "B"], ids=["a", "b", "p", "q"])
    results = [_fake_result(d, ["q"], 1), _fake_result(d, ["p"], 0)]
    piv, res = select_best_pivot(results, d)
    assert piv.index == 0 and res.groups[0].matches[1][0][0] == "p"


def test_select_best_tie_goes_to_smaller_index():
    d = Dataset.from_arrays([[0.0], [1.0]], ["A", "B"], ids=["a", "p"])
    piv, _ = select_best_pivot([_fake_result(d, ["p"], 1), _fake_result(d, ["p"], 0)], d, "sup")
    assert piv.index == 0


def test_select_best_nothing_matched():
    d = Dataset.from_arrays([[0.0], [1.0]], ["A", "B"])
    with pytest.raises(InputError, match="nothing matched"):
        select_best_pivot([_fake_result(d, [], 0)], d)


def test_select_best_recomputed_independently():
    rng = np.random.default_rng(16)
    d = random_dataset(rng, 120, 3, p=2)
    m = fit_multinomial_logit(d)
    results = match_all_pivots(d, lambda piv: score_table(m, d, piv), MatchSpec(metric="ratio"))
    for norm in ("euclidean", "sup"):
        crit = []
        anchor_rows = [i for i in range(d.n) if d.treatment[i] == 0]
        amean = [sum(d.covariates[i, c] for i in anchor_rows) / len(anchor_rows) for c in range(2)]
        for piv, r in results:
            ids = [uid for g in r.groups for ms in g.matches.values() for uid, _ in ms]
            rows = [d.ids.index(u) for u in ids]
            mean = [sum(d.covariates[i, c] for i in rows) / len(rows) for c in range(2)]
            diff = [abs(x - y) for x, y in zip(mean, amean)]
            crit.append(max(diff) if norm == "sup" else math.sqrt(sum(x * x for x in diff)))
        expected = min(range(3), key=lambda j: (round(crit[j], 12), j))
        assert select_best_pivot(results, d, norm)[0].index == expected


# -- PCA -------------------------------------------------------------------------------


def test_pca_rank_one(rng):
    S = rng.normal(size=(30, 1)) * np.array([[1.0, -2.0, 0.5]])
    red, proj = reduce_scores_pca(S, dim=1)
    assert abs(red.explained[0] - 1.0) < 1e-10
    assert proj.shape == (30, 1)


def test_pca_full_rank_isometry(rng):
    S = rng.normal(size=(40, 3)) @ rng.normal(size=(3, 3))
    red, proj = reduce_scores_pca(S, dim=3)
    Sc = S - S.mean(axis=0)
    D1 = np.linalg.norm(Sc[:, None] - Sc[None], axis=2)
    D2 = np.linalg.norm(proj[:, None] - proj[None], axis=2)
    assert np.max(np.abs(D1 - D2)) < 1e-10
    np.testing.assert_allclose(red.loadings @ red.loadings.T, np.eye(3), atol=1e-10)
    assert np.all(np.diff(red.explained) <= 1e-15) and red.explained.sum() <= 1 + 1e-10


def test_pca_collinear_normal_arms():
    rng = np.random.default_rng(17)
    means = [(0.0, 0.0), (0.5, 0.5), (1.0, 1.0)]
    X = np.vstack([rng.normal(m, 1.0, size=(1000, 2)) for m in means])
    d = Dataset.from_arrays(X, [0] * 1000 + [1] * 1000 + [2] * 1000)
    S = score_table(fit_multinomial_logit(d), d, 0).values
    red, _ = reduce_scores_pca(S, variance=0.99)
    assert red.explained[0] > 0.99 and red.dim == 1


def test_pca_errors():
    with pytest.raises(InputError):
        reduce_scores_pca([[1.0, 2.0]], dim=1)
    with pytest.raises(InputError):
        reduce_scores_pca(np.eye(3), dim=4)
    with pytest.raises(InputError):
        reduce_scores_pca(np.eye(3))
