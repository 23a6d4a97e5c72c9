import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmevents import em, sphere
from mmevents.analytics import adjusted_rand_index
from mmevents.em import FitConfig
from mmevents.model import SyntheticSpec, generate_synthetic, nested_spec
from mmevents.pipeline import (RoundConfig, assign, build_reports, final_labels,
                               hierarchical_fit, hierarchy_reports, normalized_coefficients,
                               write_assignments, write_reports)


@pytest.fixture(scope="module")
def small():
    return generate_synthetic(SyntheticSpec(K=3, P=60, D=20, M=50, N=10, seed=2))


def test_round_config_validation():
    f = FitConfig(K=2)
    with pytest.raises(ValueError):
        RoundConfig(f, prune_threshold=1.2)
    with pytest.raises(ValueError):
        RoundConfig(f, prune_threshold=0.0)
    with pytest.raises(ValueError):
        RoundConfig(f, rounds=0)
    with pytest.raises(ValueError):
        RoundConfig(f, rounds=2, K=(2, 3, 4))
    assert RoundConfig(f, rounds=3).K == (2, 2, 2)
    assert RoundConfig(f, rounds=2, K=[3, 1]).K == (3, 1)


def test_assign_examples():
    C = np.array([[0.9, 0.5, 0.0], [0.1, 0.5, 2.0]])
    k, ratio, mask = assign(C, 0.8)
    np.testing.assert_array_equal(k, [0, 0, 1])
    np.testing.assert_allclose(ratio, [0.9, 0.5, 1.0])
    np.testing.assert_array_equal(mask, [True, False, True])
    assert assign(C, 1.0)[2].tolist() == [False, False, True]


@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_assign_scale_invariant(seed, a):
    C = np.random.default_rng(seed).uniform(0, 1, (3, 7))
    k1, r1, _ = assign(C, 0.5)
    k2, r2, _ = assign(a * C, 0.5)
    np.testing.assert_array_equal(k1, k2)
    np.testing.assert_allclose(r1, r2, rtol=1e-12)


def test_normalized_coefficients_zero_column():
    W = normalized_coefficients(np.zeros((2, 1)))
    assert np.all(np.isfinite(W))


def test_single_round_equals_plain_fit(small):
    data, _ = small
    cfg = FitConfig(K=3, max_iters=15)
    res = hierarchical_fit(data, RoundConfig(cfg))
    state, trace = em.fit(data, cfg)
    assert len(res.rounds) == 1
    assert res.rounds[0].state.dumps() == state.dumps()
    assert res.rounds[0].trace.objective == trace.objective


def test_rounds_prune_disjoint_sets(small):
    data, _ = small
    res = hierarchical_fit(data, RoundConfig(FitConfig(K=3, max_iters=15), rounds=3,
                                             K=(3, 2, 2), prune_threshold=0.95))
    seen = set()
    for r in res.rounds:
        ids = {a.hashtag for a in r.assignments}
        assert not ids & seen
        seen |= ids
        # later rounds only see what is left
        if r.round > 1:
            assert set(r.data.ids).isdisjoint({a.hashtag for q in res.rounds
                                               if q.round < r.round for a in q.assignments})
    assert seen.isdisjoint({data.ids[i] for i in res.residual})
    assert len(seen) + len(res.residual) == data.P


def test_rounds_stop_when_too_few_remain(small):
    data, _ = small
    res = hierarchical_fit(data, RoundConfig(FitConfig(K=3, max_iters=10), K=data.P + 1))
    assert not res.rounds and "fewer than K" in res.stopped_early
    assert len(res.residual) == data.P


def test_zoom_rejects_unknown_event(small):
    data, _ = small
    with pytest.raises(ValueError):
        hierarchical_fit(data, RoundConfig(FitConfig(K=3, max_iters=2), zoom=(7,)))


def test_nested_structure_is_recovered():
    spec, parent = nested_spec(n_coarse=3, n_fine=2, seed=0, P=180, D=50, M=200, N=50)
    data, truth = generate_synthetic(spec)
    cfg = FitConfig(K=3, max_iters=60)
    res = hierarchical_fit(data, RoundConfig(cfg, prune_threshold=0.5, zoom=(0, 1, 2),
                                             zoom_k=2))
    labels = final_labels(res, data.ids)
    assert all(l is not None for l in labels)
    coarse = [l[1] for l in labels]
    fine = [(l[1], l[2]) for l in labels]
    fine_id = {f: j for j, f in enumerate(sorted(set(fine)))}
    assert adjusted_rand_index(coarse, parent[truth.labels]) >= 0.8
    assert adjusted_rand_index([fine_id[f] for f in fine], truth.labels) >= 0.8


# -- reports ------------------------------------------------------------------

def test_reports_tie_order_and_geo_round_trip(small):
    data, _ = small
    state = em.init_state(data, FitConfig(K=3))
    reps = build_reports(state, data, n_top=4)
    # X = 0: all scores tie, dictionary order is kept
    assert [w for w, _ in reps[0].top_words] == data.words[:4]
    for rep, b in zip(reps, state.b):
        back = sphere.geo_to_cartesian(rep.latitude, rep.longitude)
        np.testing.assert_allclose(back, b, atol=1e-9)
    assert sum(r.members for r in reps) == data.P


def test_reports_recover_top_words():
    data, truth = generate_synthetic(SyntheticSpec(K=1, P=40, D=30, M=300, N=5, seed=3))
    state, _ = em.fit(data, FitConfig(K=1, max_iters=30))
    rep = build_reports(state, data, n_top=10)[0]
    # true scores relative to the pivot word, which is the last dictionary word
    u = truth.U[0, :-1] - truth.U[0, -1]
    want = {data.words[j] for j in np.argsort(-u)[:10]}
    got = {w for w, _ in rep.top_words}
    assert len(want & got) >= 8


def test_report_and_assignment_files(tmp_path, small):
    data, _ = small
    res = hierarchical_fit(data, RoundConfig(FitConfig(K=3, max_iters=5), zoom=(0,)))
    write_reports(tmp_path / "e.json", hierarchy_reports(res, n_top=3))
    obj = json.loads((tmp_path / "e.json").read_text())
    assert obj["format"] == "mmevents-events"
    assert {e["round"] for e in obj["events"]} == {1}
    assert any(e["parent_event"] == 0 for e in obj["events"])
    write_assignments(tmp_path / "a.csv", res.assignments())
    rows = list(csv.DictReader(open(tmp_path / "a.csv")))
    assert set(rows[0]) == {"hashtag", "round", "parent_event", "event", "coefficient"}
    assert len(rows) == len(res.assignments())
