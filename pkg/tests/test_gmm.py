import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxid.gmm import (
    GmmModel,
    e_step,
    em_fit,
    gmm_identify,
    gmm_log_likelihood,
    log_gaussian,
    logsumexp,
    m_step,
    variance_floor,
)


def direct_density(x, mu, var):
    """Product of 1-D normal densities, evaluated with plain exponentials."""
    p = 1.0
    for xd, md, vd in zip(x, mu, var):
        p *= math.exp(-((xd - md) ** 2) / (2 * vd)) / math.sqrt(2 * math.pi * vd)
    return p


def naive_avg_ll(X, model):
    total = 0.0
    for x in X:
        s = sum(
            w * direct_density(x, mu, var)
            for w, mu, var in zip(model.weights, model.means, model.variances)
        )
        total += math.log(s)
    return total / len(X)


def random_model(g, M, D, spread=2.0):
    w = g.uniform(0.2, 1.0, M)
    return GmmModel(w / w.sum(), g.normal(0, spread, (M, D)), g.uniform(0.5, 2.0, (M, D)))


class TestLogGaussian:
    def test_standard_normal(self):
        assert log_gaussian([0.0], [0.0], [1.0]) == pytest.approx(-0.918939, abs=1e-6)
        assert log_gaussian([0.0], [0.0], [1.0]) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
        assert log_gaussian([1.0, 2.0], [1.0, 2.0], [1.0, 1.0]) == pytest.approx(-1.837877, abs=1e-6)

    def test_direct_formula(self, rng):
        x, mu, var = rng.normal(size=4), rng.normal(size=4), rng.uniform(0.5, 2.0, 4)
        assert log_gaussian(x, mu, var) == pytest.approx(math.log(direct_density(x, mu, var)), abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            log_gaussian([0.0], [0.0], [0.0])
        with pytest.raises(ValueError):
            log_gaussian([0.0, 1.0], [0.0], [1.0])


class TestLogLikelihood:
    def test_single_component(self, rng):
        X = rng.normal(size=(20, 3))
        mdl = GmmModel([1.0], [[0.1, 0.2, 0.3]], [[1.0, 2.0, 0.5]])
        expect = np.mean([log_gaussian(x, mdl.means[0], mdl.variances[0]) for x in X])
        assert gmm_log_likelihood(X, mdl) == pytest.approx(expect, rel=1e-14)

    def test_duplicate_components_collapse(self, rng):
        X = rng.normal(size=(20, 2))
        one = GmmModel([1.0], [[0.5, -0.5]], [[1.5, 0.7]])
        two = GmmModel([0.5, 0.5], [[0.5, -0.5]] * 2, [[1.5, 0.7]] * 2)
        assert gmm_log_likelihood(X, two) == pytest.approx(gmm_log_likelihood(X, one), rel=1e-14)

    def test_naive_oracle(self, rng):
        mdl = random_model(rng, 5, 4)
        X = rng.normal(size=(30, 4))
        assert gmm_log_likelihood(X, mdl) == pytest.approx(naive_avg_ll(X, mdl), rel=1e-9)

    def test_no_underflow(self):
        mdl = GmmModel([0.5, 0.5], [[0.0] * 16, [100.0] * 16], [[1.0] * 16] * 2)
        X = np.full((3, 16), 50.0)
        with np.errstate(under="ignore"):
            assert naive_avg_ll_or_none(X, mdl) is None
        assert np.isfinite(gmm_log_likelihood(X, mdl))

    def test_errors(self):
        mdl = GmmModel([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
        with pytest.raises(ValueError):
            gmm_log_likelihood(np.zeros((2, 3)), mdl)
        with pytest.raises(ValueError):
            gmm_log_likelihood(np.zeros((0, 2)), mdl)

    def test_logsumexp(self):
        assert logsumexp(np.array([[-np.inf, -np.inf]]), axis=1)[0] == -np.inf
        assert logsumexp(np.array([1000.0, 1000.0])) == pytest.approx(1000 + math.log(2))


def naive_avg_ll_or_none(X, mdl):
    try:
        return naive_avg_ll(X, mdl)
    except ValueError:  # math.log(0.0)
        return None


class TestModel:
    def test_invariants(self):
        with pytest.raises(ValueError):
            GmmModel([0.5, 0.6], [[0.0], [1.0]], [[1.0], [1.0]])
        with pytest.raises(ValueError):
            GmmModel([1.0, 0.0], [[0.0], [1.0]], [[1.0], [1.0]])
        with pytest.raises(ValueError):
            GmmModel([1.0], [[0.0]], [[0.0]])
        with pytest.raises(ValueError):
            GmmModel([1.0], [[np.nan]], [[1.0]])


class TestEStep:
    def test_single_component(self, rng):
        gamma, _ = e_step(rng.normal(size=(10, 2)), GmmModel([1.0], [[0.0, 0.0]], [[1.0, 1.0]]))
        assert np.all(gamma == 1.0)

    def test_separated(self):
        mdl = GmmModel([0.5, 0.5], [[0.0], [20.0]], [[1.0], [1.0]])
        gamma, _ = e_step([[0.0], [20.0]], mdl)
        assert gamma[0, 0] >= 1 - 1e-6 and gamma[1, 1] >= 1 - 1e-6

    def test_rows_sum_to_one_and_ll_matches(self, rng):
        mdl = random_model(rng, 6, 3)
        X = rng.normal(size=(40, 3)) * 3
        gamma, ll = e_step(X, mdl)
        np.testing.assert_allclose(gamma.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        assert np.all((gamma >= 0) & (gamma <= 1))
        assert ll == gmm_log_likelihood(X, mdl)


class TestMStep:
    def test_single_component_closed_form(self, rng):
        X = rng.normal(size=(50, 3))
        mdl = m_step(X, np.ones((50, 1)))
        np.testing.assert_allclose(mdl.means[0], X.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(mdl.variances[0], X.var(axis=0), atol=1e-12)
        assert mdl.weights.tolist() == [1.0]

    def test_hard_assignments(self, rng):
        X = rng.normal(size=(30, 2))
        labels = np.arange(30) % 3
        gamma = np.eye(3)[labels]
        mdl = m_step(X, gamma)
        for i in range(3):
            np.testing.assert_allclose(mdl.means[i], X[labels == i].mean(axis=0), atol=1e-12)
            np.testing.assert_allclose(mdl.variances[i], X[labels == i].var(axis=0), atol=1e-12)
        np.testing.assert_allclose(mdl.weights, [1 / 3] * 3, atol=1e-15)

    def test_weights_simplex_and_floor(self, rng):
        X = rng.normal(size=(40, 4))
        gamma = rng.dirichlet(np.ones(5), size=40)
        mdl = m_step(X, gamma)
        assert abs(mdl.weights.sum() - 1.0) <= 1e-12 and np.all(mdl.weights > 0)
        assert np.all(mdl.variances >= variance_floor(X))

    def test_variance_floor_applied(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [5.0, 2.0], [5.0, 3.0]])
        gamma = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=float)
        mdl = m_step(X, gamma)
        floor = variance_floor(X)
        assert mdl.variances[0, 0] == floor[0] and mdl.variances[1, 0] == floor[0]

    def test_starved_component_reinitialised(self, rng):
        X = np.vstack([rng.normal(size=(50, 2)), [[30.0, 30.0]]])
        gamma = np.zeros((51, 3))
        gamma[:, 0] = 0.5
        gamma[:, 1] = 0.5
        mdl = m_step(X, gamma)
        assert mdl.m == 3
        np.testing.assert_array_equal(mdl.means[2], [30.0, 30.0])  # worst-explained frame
        np.testing.assert_allclose(mdl.variances[2], X.var(axis=0))
        assert abs(mdl.weights.sum() - 1.0) <= 1e-12 and np.all(mdl.weights > 0)


class TestEmFit:
    def test_single_component_fixed_point(self, rng):
        X = rng.normal(size=(80, 3)) * [1.0, 3.0, 0.5] + 2
        for seed in (0, 1, 99):
            mdl, trace = em_fit(X, 1, seed=seed)
            assert trace.converged and trace.iterations_run == 1
            np.testing.assert_allclose(mdl.means[0], X.mean(axis=0), atol=1e-10)
            np.testing.assert_allclose(mdl.variances[0], X.var(axis=0), atol=1e-10)

    def test_recovers_separated_means(self):
        g = np.random.default_rng(2024)
        true = np.array([[0.0, 0.0], [10.0, 10.0]])
        X = np.vstack([g.normal(true[0], 1.0, (1000, 2)), g.normal(true[1], 1.0, (1000, 2))])
        mdl, _ = em_fit(X, 2, seed=7, max_iter=50)
        got = mdl.means[np.argsort(mdl.means[:, 0])]
        assert np.max(np.abs(got - true)) < 0.1

    @pytest.mark.parametrize("m,iters", [(2, 6), (4, 8), (5, 10), (6, 12), (7, 14)])
    def test_table_regimes(self, rng, m, iters):
        X = rng.normal(size=(300, 16))
        mdl, trace = em_fit(X, m, seed=42, max_iter=iters)
        assert mdl.m == m and mdl.dim == 16
        assert 1 <= trace.iterations_run <= iters
        assert len(trace.log_likelihoods) == trace.iterations_run + 1

    @given(st.integers(0, 2**32), st.integers(1, 6), st.integers(1, 5))
    @settings(max_examples=30, deadline=None)
    def test_monotone_trace(self, seed, m, D):
        g = np.random.default_rng(seed)
        X = np.vstack([g.normal(g.normal(0, 3, D), g.uniform(0.3, 2), (40, D)) for _ in range(3)])
        _, trace = em_fit(X, m, seed=seed, max_iter=25, tol=1e-9)
        ll = trace.log_likelihoods
        assert all(b >= a - 1e-8 for a, b in zip(ll, ll[1:]))

    def test_deterministic(self, rng):
        X = rng.normal(size=(200, 5))
        a, ta = em_fit(X, 4, seed=3)
        b, tb = em_fit(X, 4, seed=3)
        assert a.means.tobytes() == b.means.tobytes() and a.variances.tobytes() == b.variances.tobytes()
        assert a.weights.tobytes() == b.weights.tobytes() and ta == tb

    def test_errors(self, rng):
        with pytest.raises(ValueError):
            em_fit(rng.normal(size=(3, 2)), 4)
        with pytest.raises(ValueError):
            em_fit(rng.normal(size=(30, 2)), 2, tol=0)


class TestIdentify:
    def test_log_density_gap(self):
        models = {"A": GmmModel([1.0], [[0.0]], [[1.0]]), "B": GmmModel([1.0], [[10.0]], [[1.0]])}
        ranked = gmm_identify([[0.0]], models)
        assert ranked[0].speaker_id == "A"
        assert ranked[0].log_likelihood - ranked[1].log_likelihood == pytest.approx(50.0, abs=1e-12)

    def test_single_speaker(self, rng):
        ranked = gmm_identify(rng.normal(size=(5, 2)) + 100, {"only": random_model(rng, 2, 2)})
        assert [s.speaker_id for s in ranked] == ["only"]

    def test_ties_and_empty(self):
        m = GmmModel([1.0], [[0.0]], [[1.0]])
        assert [s.speaker_id for s in gmm_identify([[0.0]], {"b": m, "a": m})] == ["a", "b"]
        with pytest.raises(ValueError):
            gmm_identify([[0.0]], {})

    @given(st.integers(0, 2**32), st.floats(-20, 20))
    @settings(max_examples=15, deadline=None)
    def test_translation_invariance(self, seed, shift):
        g = np.random.default_rng(seed)
        train = {f"s{i}": g.normal(g.normal(0, 2, 3), 1.0, (120, 3)) for i in range(3)}
        test = g.normal(size=(20, 3))

        def scores(offset):
            models = {s: em_fit(X + offset, 2, seed=1)[0] for s, X in train.items()}
            return gmm_identify(test + offset, models)

        base, moved = scores(0.0), scores(shift)
        assert [s.speaker_id for s in base] == [s.speaker_id for s in moved]
        diffs = np.diff([s.log_likelihood for s in base])
        np.testing.assert_allclose(np.diff([s.log_likelihood for s in moved]), diffs, atol=1e-9, rtol=0)
