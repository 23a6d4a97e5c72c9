import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from mmevents import em, sphere, text
from mmevents.model import (EPS_C, Dataset, GroundTruth, HashtagRecord, ModelState,
                            SyntheticSpec, bound_stats, coefficient_hessian,
                            generate_synthetic, match_events, model_geo_loglik,
                            multinomial_trace_term, nested_spec, posterior_entropy,
                            surrogate_objective, vmf_objective)

from conftest import dense_A, dense_posterior, phi_from_factors, random_instance, tilde


def small_dataset():
    H = sp.csr_matrix(np.array([[2, 0, 1], [0, 3, 1]]))
    return Dataset(["a", "b"], ["x", "y", "z"], H, [[1.0, 0, 0], [0, 0, 1.5]], [1, 2])


# -- containers ------------------------------------------------------------------

def test_dataset_basics():
    d = small_dataset()
    assert (d.P, d.D) == (2, 3)
    np.testing.assert_array_equal(d.M, [3, 4])
    r = d.record(1)
    assert r.id == "b" and r.counts.total == 4 and r.n_geo == 2
    np.testing.assert_allclose(d.log_coef, [text.log_multinomial_coef([2, 0, 1]),
                                            text.log_multinomial_coef([0, 3, 1])])


def test_dataset_validation():
    H = sp.csr_matrix(np.array([[1, 0], [0, 0]]))
    with pytest.raises(ValueError):
        Dataset(["a", "b"], ["x", "y"], H, np.zeros((2, 3)), [0, 0])
    with pytest.raises(ValueError):
        Dataset(["a"], ["x", "y"], sp.csr_matrix([[1, 1]]), [[2.0, 0, 0]], [1])
    with pytest.raises(ValueError):
        Dataset(["a"], ["x", "x"], sp.csr_matrix([[1, 1]]), [[0.0, 0, 0]], [0])
    with pytest.raises(ValueError):
        HashtagRecord("a", text.WordCounts([0], [1], 2), [0, 0, 3.0], 2)


def test_dataset_from_records_and_json_round_trip(tmp_path):
    d = small_dataset()
    e = Dataset.from_records([d.record(i) for i in range(d.P)], d.words)
    assert (e.counts != d.counts).nnz == 0
    d.raw_geo = [np.array([[1.0, 0, 0]]), np.array([[0, 0, 1.0], [0, 0, 0.5]])]
    d.save(tmp_path / "d.json")
    f = Dataset.load(tmp_path / "d.json")
    assert f.ids == d.ids and f.words == d.words
    assert (f.counts != d.counts).nnz == 0
    np.testing.assert_array_equal(f.geo_sum, d.geo_sum)
    np.testing.assert_array_equal(f.raw_geo[1], d.raw_geo[1])
    with pytest.raises(ValueError):
        Dataset.from_json({"format": "other"})


def test_dataset_subset_refilters_dictionary():
    H = sp.csr_matrix(np.array([[2, 0, 1, 0], [0, 3, 1, 0], [0, 0, 0, 5]]))
    d = Dataset(list("abc"), list("wxyz"), H, np.zeros((3, 3)), [0, 0, 0])
    s = d.subset([1, 0])
    assert s.ids == ["b", "a"]
    assert s.words == ["x", "w", "y"]  # frequency 3, 2, 2 (tie broken by word)
    np.testing.assert_array_equal(s.counts.toarray(), [[3, 0, 1], [0, 2, 1]])


def test_model_state_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    _, state, _ = random_instance(rng, 3, 5, 4)
    state.X = rng.standard_normal(state.X.shape) / 3.0
    state.save(tmp_path / "m.json")
    back = ModelState.load(tmp_path / "m.json")
    for f in ModelState._FIELDS:
        assert np.array_equal(getattr(back, f), getattr(state, f))
    assert back.dumps() == state.dumps()


def test_weights_floor():
    state = ModelState(C=np.zeros((2, 1)), beta=np.eye(3)[:2], s=np.ones(2), b=np.eye(3)[:2],
                       r=np.zeros(2), X=np.zeros((2, 1)), F_inv=np.eye(2),
                       Delta=np.zeros((2, 2)), kappa=np.zeros(1), psi_X=np.zeros((2, 1)),
                       psi_C=np.zeros((2, 1)))
    assert np.all(np.isfinite(state.weights()))
    state.C[:, 0] = [EPS_C / 2, 0.0]
    assert np.all(state.weights() <= 1.0)


# -- dense oracles -----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(4))
def test_posterior_factors_match_dense_inverse(seed):
    rng = np.random.default_rng(seed)
    data, state, H = random_instance(rng, 2, 4, 3)
    em.mult_e_step(state, data)
    Phi, phi, _, _ = dense_posterior(state.C, data.M, H, [state.psi(i) for i in range(3)])
    assert np.abs(phi_from_factors(state.F_inv, state.Delta, 4) - Phi).max() < 1e-8
    assert np.abs(state.X.T.ravel() - phi).max() < 1e-8


def test_phi_positive_definite_and_eigen_blocks():
    rng = np.random.default_rng(9)
    data, state, _ = random_instance(rng, 3, 6, 5)
    em.mult_e_step(state, data)
    Phi = phi_from_factors(state.F_inv, state.Delta, 6)
    assert np.linalg.eigvalsh(Phi).min() > 0
    _, ld = np.linalg.slogdet(Phi)
    assert posterior_entropy(state, 6) == pytest.approx(0.5 * ld + 0.5 * 3 * 5, abs=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_trace_term_matches_dense(seed):
    rng = np.random.default_rng(seed)
    data, state, H = random_instance(rng, 2, 4, 3)
    em.mult_e_step(state, data)
    # move C away from the posterior's C so the check is not at a special point
    state.C = rng.uniform(0.1, 2.0, size=state.C.shape)
    Phi, phi, _, _ = dense_posterior(state.C, data.M, H, [state.psi(i) for i in range(3)])
    Phi = phi_from_factors(state.F_inv, state.Delta, 4)
    phi = state.X.T.ravel()
    A = dense_A(4)
    S = np.eye(len(phi))
    lin = np.zeros(len(phi))
    for i in range(3):
        Ct = tilde(state.C[:, i], 4)
        S += data.M[i] * Ct @ A @ Ct.T
        _, z = text.transformed_obs(H[i], state.psi(i))
        lin += Ct @ z
    ref = -0.5 * np.trace(S @ (Phi + np.outer(phi, phi))) + phi @ lin
    got = multinomial_trace_term(state, data, bound_stats(state, data))
    assert got == pytest.approx(ref, abs=1e-8)


def test_gamma_matches_dense_trace_form():
    rng = np.random.default_rng(3)
    data, state, _ = random_instance(rng, 2, 4, 3)
    em.mult_e_step(state, data)
    Phi = phi_from_factors(state.F_inv, state.Delta, 4)
    phi = state.X.T.ravel()
    A = dense_A(4)
    Gamma, _ = em.coeff_subproblem(1, state, data)
    for _ in range(10):
        c = rng.standard_normal(2)
        Ct = tilde(c, 4)
        ref = np.trace(data.M[1] * Ct @ A @ Ct.T @ (Phi + np.outer(phi, phi)))
        assert c @ Gamma @ c == pytest.approx(ref, abs=1e-8)


def test_gamma_linear_in_M():
    rng = np.random.default_rng(4)
    data, state, _ = random_instance(rng, 2, 4, 3)
    em.mult_e_step(state, data)
    G = coefficient_hessian(state, 4)
    np.testing.assert_allclose(2 * G, 2.0 * coefficient_hessian(state, 4))
    Gamma, _ = em.coeff_subproblem(0, state, data)
    np.testing.assert_allclose(Gamma, data.M[0] * G, atol=1e-12)


def test_psi_update_matches_kronecker_identity():
    rng = np.random.default_rng(5)
    data, state, _ = random_instance(rng, 3, 5, 4)
    state.X = rng.standard_normal((3, 4))
    em.mult_m_step(state)
    for i in range(4):
        ref = tilde(state.C[:, i], 5).T @ state.X.T.ravel()
        np.testing.assert_allclose(state.psi(i), ref, atol=1e-10)


# -- objective ---------------------------------------------------------------------

def test_vmf_objective_uniform_case():
    rng = np.random.default_rng(0)
    data, state, _ = random_instance(rng, 3, 4, 5)
    state.s[:] = 0.0
    state.kappa[:] = 0.0
    ref = 3 * sphere.vmf_log_norm_const(0.0) + data.n_geo.sum() * sphere.vmf_log_norm_const(0.0)
    assert vmf_objective(state, data) == pytest.approx(ref)


def test_vmf_objective_scale_invariant_in_c():
    rng = np.random.default_rng(1)
    data, state, _ = random_instance(rng, 3, 4, 5)
    a = vmf_objective(state, data)
    state.C[:, 2] *= 2.0
    assert vmf_objective(state, data) == pytest.approx(a, abs=1e-12)


def test_surrogate_objective_finite_and_consistent():
    rng = np.random.default_rng(2)
    data, state, _ = random_instance(rng, 2, 5, 4)
    em.mult_e_step(state, data)
    o1 = surrogate_objective(state, data)
    o2 = surrogate_objective(state, data, bound_stats(state, data, chunk=1))
    assert np.isfinite(o1) and o1 == pytest.approx(o2, abs=1e-9)


def test_bound_is_a_lower_bound_at_point_mass():
    # with X at a fixed value and Phi -> 0 the text part lower-bounds the
    # exact multinomial log likelihood at eta_i = X^T c_i
    rng = np.random.default_rng(6)
    data, state, H = random_instance(rng, 2, 4, 3)
    em.mult_e_step(state, data)
    stats = bound_stats(state, data)
    eta = state.C.T @ state.X
    exact = sum(text.multinomial_log_pmf(H[i], eta[i]) for i in range(3))
    G = coefficient_hessian(state, 4)
    x1 = state.X.sum(axis=1)
    Gmean = 0.5 * state.X @ state.X.T - np.outer(x1, x1) / 8.0
    quad = sum(data.M[i] * state.C[:, i] @ Gmean @ state.C[:, i] for i in range(3))
    lin = float(np.sum(state.C.T * stats.Xz))
    bound = -0.5 * quad + lin - stats.bound_const + data.log_coef.sum()
    assert bound <= exact + 1e-9
    assert np.all(np.isfinite(G))


# -- geo log-likelihood ------------------------------------------------------------

def test_model_geo_loglik_cases():
    rng = np.random.default_rng(7)
    data, state, _ = random_instance(rng, 1, 4, 3)
    state.kappa[:] = 0.0
    np.testing.assert_allclose(model_geo_loglik(state, data),
                               data.n_geo * -np.log(4 * np.pi))


def test_model_geo_loglik_matches_per_sample_sum():
    data, truth = generate_synthetic(SyntheticSpec(K=2, P=6, D=5, M=10, N=7, seed=3))
    rng = np.random.default_rng(0)
    b = sphere.normalize(rng.standard_normal((2, 3)))
    state = ModelState(C=truth.C, beta=b, s=np.ones(2), b=b, r=np.ones(2),
                       X=np.zeros((2, 4)), F_inv=np.eye(2), Delta=np.zeros((2, 2)),
                       kappa=rng.uniform(0, 10, 6), psi_X=np.zeros((2, 4)),
                       psi_C=np.zeros((2, 6)))
    got = model_geo_loglik(state, data)
    for i in range(6):
        mean = sphere.normalize(b.T @ truth.C[:, i])
        ref = sphere.vmf_log_pdf(data.raw_geo[i], sphere.VmfParams(mean, state.kappa[i])).sum()
        assert got[i] == pytest.approx(ref, abs=1e-10)
    # K = 1 reduces to a single vMF
    one = ModelState(C=np.ones((1, 6)), beta=b[:1], s=np.ones(1), b=b[:1], r=np.ones(1),
                     X=np.zeros((1, 4)), F_inv=np.eye(1), Delta=np.zeros((1, 1)),
                     kappa=state.kappa, psi_X=np.zeros((1, 4)), psi_C=np.zeros((1, 6)))
    ref = [sphere.vmf_log_pdf(data.raw_geo[i], sphere.VmfParams(b[0], state.kappa[i])).sum()
           for i in range(6)]
    np.testing.assert_allclose(model_geo_loglik(one, data), ref, atol=1e-10)


# -- synthetic generator -----------------------------------------------------------

def test_generator_deterministic_and_shapes():
    a, ta = generate_synthetic(SyntheticSpec(seed=4))
    b, tb = generate_synthetic(SyntheticSpec(seed=4))
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())
    assert (a.P, a.D) == (200, 50)
    np.testing.assert_array_equal(a.M, 200)
    np.testing.assert_array_equal(a.n_geo, 50)
    np.testing.assert_array_equal(ta.labels, tb.labels)
    G = ta.V @ ta.V.T
    np.fill_diagonal(G, -1)
    assert G.max() <= np.cos(np.radians(60)) + 1e-12
    assert np.all((ta.C > 0).sum(axis=0) == 1)


def test_generator_concentration_limit():
    v = np.array([[0.0, 0.6, 0.8]])
    data, _ = generate_synthetic(SyntheticSpec(K=1, P=3, D=4, M=5, N=20, directions=v,
                                               kappa_range=(1e6, 1e6), seed=0))
    for w in data.raw_geo:
        # angular spread is about sqrt(2 / kappa) = 1.4e-3
        assert np.abs(w - v).max() < 1e-2


def test_generator_uniform_words_when_scores_zero():
    spec = SyntheticSpec(K=2, P=50, D=5, M=400, N=1, word_scores=np.zeros((2, 5)), seed=1)
    data, _ = generate_synthetic(spec)
    freq = np.asarray(data.counts.sum(axis=0)).ravel() / data.M.sum()
    # 20000 draws: 5 standard errors of a proportion near 0.2 is about 0.014
    assert np.abs(freq - 0.2).max() < 0.015


def test_generator_dictionary_frequency_order():
    data, truth = generate_synthetic(SyntheticSpec(seed=2))
    freq = np.asarray(data.counts.sum(axis=0)).ravel()
    assert np.all(np.diff(freq) <= 0)
    assert truth.U.shape == (3, 50)


def test_ground_truth_json_round_trip():
    _, truth = generate_synthetic(SyntheticSpec(K=2, P=5, D=4, M=3, N=2))
    back = GroundTruth.from_json(json.loads(json.dumps(truth.to_json())))
    np.testing.assert_array_equal(back.C, truth.C)
    np.testing.assert_array_equal(back.labels, truth.labels)


def test_nested_spec_structure():
    spec, parent = nested_spec(n_coarse=3, n_fine=2, fine_angle=25.0, seed=1)
    assert spec.K == 6 and list(parent) == [0, 0, 1, 1, 2, 2]
    V = spec.directions
    ang = np.degrees(np.arccos(np.clip(V[0] @ V[1], -1, 1)))
    assert ang == pytest.approx(25.0, abs=1e-9)


@given(st.permutations(range(4)))
def test_match_events_recovers_permutation(perm):
    rng = np.random.default_rng(0)
    V = sphere.normalize(rng.standard_normal((4, 3)))
    fitted = V[list(perm)]
    p, ang = match_events(V, fitted)
    np.testing.assert_allclose(ang, 0.0, atol=1e-6)
    for k in range(4):
        assert perm[p[k]] == k
