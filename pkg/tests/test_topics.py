import dataclasses

import numpy as np
import pytest
from scipy.optimize import minimize_scalar
from scipy.special import gammaln

from annodesign.corpus import RawDocument, TokenizerConfig, build_corpus
from annodesign.topics import (
    TopicModel,
    TopicPrior,
    _block_log_det,
    _weight_precision,
    fit_topics,
    log_marginal,
    sample_weights,
    sample_weights_all,
    select_k,
    topic_lift,
)

from conftest import make_corpus, two_topic_counts


def small_corpus(seed=0, n=60, p=12, m=40):
    X, _, _ = two_topic_counts(seed, n=n, m=m, p=p)
    return make_corpus(X)


class TestFitValidation:
    def test_k_bounds(self, tiny_corpus):
        with pytest.raises(ValueError):
            fit_topics(tiny_corpus, 0)
        with pytest.raises(ValueError, match="exceeds"):
            fit_topics(tiny_corpus, tiny_corpus.n + 1)

    def test_max_iter_positive(self, tiny_corpus):
        with pytest.raises(ValueError):
            fit_topics(tiny_corpus, 1, max_iter=0)

    def test_prior_positivity(self):
        with pytest.raises(ValueError):
            TopicPrior(omega_concentration=0.0).resolve(2, 3)

    def test_default_prior_values(self):
        assert TopicPrior().resolve(4, 10) == (0.25, 1.0 / 40.0)


class TestSingleDocument:
    """One document 'a a b' with K=1 has a closed-form MAP."""

    def test_matches_one_dimensional_oracle(self):
        corpus = build_corpus([RawDocument("d", "a a b")], TokenizerConfig())
        model = fit_topics(corpus, 1)
        # independent oracle: maximize 2 log t + log(1-t) + a (log t + log(1-t))
        a_t = 1.0 / 2.0
        res = minimize_scalar(
            lambda t: -(2 * np.log(t) + np.log1p(-t) + a_t * (np.log(t) + np.log1p(-t))),
            bounds=(1e-6, 1 - 1e-6),
            method="bounded",
        )
        np.testing.assert_allclose(model.theta[0, 0], res.x, atol=1e-6)
        np.testing.assert_allclose(model.theta[0], [0.625, 0.375], atol=1e-12)
        np.testing.assert_allclose(model.omega, [[1.0]], atol=1e-12)


class TestFitInvariants:
    @pytest.mark.parametrize("seed", range(4))
    def test_objective_monotone_nondecreasing(self, seed):
        model = fit_topics(small_corpus(seed), 3, seed=seed)
        path = np.array(model.fit_report.objective_path)
        diffs = np.diff(path)
        assert np.all(diffs >= -1e-9 * (1.0 + np.abs(path[:-1])))

    def test_simplex_constraints(self):
        model = fit_topics(small_corpus(1), 3, seed=1)
        np.testing.assert_allclose(model.theta.sum(axis=1), 1.0, atol=1e-10)
        np.testing.assert_allclose(model.omega.sum(axis=1), 1.0, atol=1e-10)
        assert model.theta.min() > 0
        assert model.omega.min() > 0

    def test_natural_parameters_invert_to_weights(self):
        model = fit_topics(small_corpus(2), 3, seed=2)
        lam = model.lambda_
        full = np.concatenate([np.zeros((model.n_docs, 1)), lam], axis=1)
        back = np.exp(full)
        back /= back.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(back, model.omega, rtol=1e-8, atol=1e-12)

    def test_seed_reproducibility(self):
        a = fit_topics(small_corpus(3), 2, seed=9)
        b = fit_topics(small_corpus(3), 2, seed=9)
        np.testing.assert_array_equal(a.theta, b.theta)
        np.testing.assert_array_equal(a.omega, b.omega)
        assert a.log_posterior == b.log_posterior

    def test_topics_ordered_by_usage(self):
        model = fit_topics(small_corpus(4), 3, seed=4)
        usage = model.omega.T @ model.totals
        assert np.all(np.diff(usage) <= 1e-9)

    def test_recovers_disjoint_topics(self):
        X, theta_true, _ = two_topic_counts(5, n=300, m=150, p=20)
        model = fit_topics(make_corpus(X), 2, seed=0)
        cos = model.theta @ theta_true.T / (
            np.linalg.norm(model.theta, axis=1)[:, None]
            * np.linalg.norm(theta_true, axis=1)[None, :]
        )
        # best assignment of fitted to true topics
        best = max(cos[0, 0] + cos[1, 1], cos[0, 1] + cos[1, 0]) / 2
        assert best > 0.99

    def test_save_load_roundtrip(self, tmp_path):
        model = fit_topics(small_corpus(6), 2, seed=6)
        path = tmp_path / "model.bin"
        model.save(path)
        loaded = TopicModel.load(path)
        np.testing.assert_array_equal(loaded.theta, model.theta)
        np.testing.assert_array_equal(loaded.omega, model.omega)
        assert loaded.doc_ids == model.doc_ids
        assert loaded.log_posterior == model.log_posterior
        assert loaded.fit_report.converged == model.fit_report.converged


def _log_dirichlet_norm(dim, conc):
    return dim * gammaln(conc) - gammaln(dim * conc)


def dense_marginal_oracle(model, corpus):
    """Laplace marginal with every determinant computed by dense slogdet."""
    X = corpus.counts.toarray().astype(float)
    n, p = X.shape
    K = model.K
    w, t = model.omega, model.theta
    a_w, a_t = model.omega_concentration, model.theta_concentration
    Q = w @ t
    L = (
        float(np.sum(X * np.log(Q)))
        + a_w * float(np.sum(np.log(w)))
        + a_t * float(np.sum(np.log(t)))
        - n * _log_dirichlet_norm(K, a_w)
        - K * _log_dirichlet_norm(p, a_t)
    )
    log_det = 0.0
    for i in range(n):
        free = w[i, 1:]
        H = (X[i].sum() + a_w * K) * (np.diag(free) - np.outer(free, free))
        log_det += np.linalg.slogdet(H)[1]
    mass = np.einsum("ij,ik,kj->k", X / Q, w, t)
    for k in range(K):
        free = t[k, 1:]
        H = (mass[k] + a_t * p) * (np.diag(free) - np.outer(free, free))
        log_det += np.linalg.slogdet(H)[1]
    d = n * (K - 1) + K * (p - 1)
    return L + 0.5 * d * np.log(2 * np.pi) - 0.5 * log_det


class TestLogMarginal:
    def test_matches_dense_determinant_oracle(self):
        corpus = small_corpus(7, n=40, p=10)
        model = fit_topics(corpus, 3, seed=7)
        got = log_marginal(model, corpus)
        assert got.flagged_doc_blocks == 0
        assert got.flagged_topic_blocks == 0
        np.testing.assert_allclose(got.value, dense_marginal_oracle(model, corpus), rtol=1e-9)

    def test_invariant_under_topic_relabeling(self):
        corpus = small_corpus(8, n=50, p=12)
        model = fit_topics(corpus, 3, seed=8)
        base = log_marginal(model, corpus).value
        perm = [2, 0, 1]
        permuted = dataclasses.replace(
            model,
            theta=np.ascontiguousarray(model.theta[perm]),
            omega=np.ascontiguousarray(model.omega[:, perm]),
        )
        np.testing.assert_allclose(log_marginal(permuted, corpus).value, base, atol=1e-6)

    def test_rejects_other_corpus(self):
        corpus = small_corpus(9, n=30, p=10)
        model = fit_topics(corpus, 2, seed=9)
        other = corpus.subset(np.arange(10))
        with pytest.raises(ValueError, match="different corpus"):
            log_marginal(model, other)

    def test_boundary_block_closed_form(self):
        # interior probability vector: closed form equals dense slogdet
        w = np.array([0.5, 0.3, 0.2])
        ld, flagged = _block_log_det(w, 10.0)
        free = w[1:]
        want = np.linalg.slogdet(10.0 * (np.diag(free) - np.outer(free, free)))[1]
        assert not flagged
        np.testing.assert_allclose(ld, want, rtol=1e-12)

    def test_boundary_block_flagged(self):
        w = np.array([1.0 - 1e-15, 5e-16, 5e-16])
        ld, flagged = _block_log_det(w, 10.0)
        assert flagged
        assert np.isfinite(ld)

    def test_determinant_identity(self):
        # det over the K-1 free coordinates equals the product of all K probs
        rng = np.random.default_rng(0)
        for _ in range(20):
            w = rng.dirichlet(np.ones(5))
            free = w[1:]
            det = np.linalg.det(np.diag(free) - np.outer(free, free))
            np.testing.assert_allclose(det, np.prod(w), rtol=1e-9)


class TestSelectK:
    def test_picks_true_structure(self):
        X, _, _ = two_topic_counts(10, n=150, m=120, p=16)
        sel = select_k(make_corpus(X), [1, 2, 4], seed=0)
        assert sel.best_k == 2
        assert sel.best_model.K == 2
        assert set(sel.marginals) == {1, 2, 4}

    def test_empty_grid(self, tiny_corpus):
        with pytest.raises(ValueError):
            select_k(tiny_corpus, [])


class TestWeightPosterior:
    def test_precision_matches_finite_differences(self):
        # the block is the exact Hessian of c . log softmax(0, lam) at its mode
        w = np.array([0.4, 0.35, 0.25])
        m, a_w = 17.0, 0.5
        H = _weight_precision(w, m, a_w)
        c = (m + a_w * 3) * w

        def neg_ll(lam):
            full = np.concatenate([[0.0], lam])
            return -float(c @ (full - np.log(np.sum(np.exp(full)))))

        lam_hat = np.log(w[1:] / w[0])
        eps = 1e-5
        fd = np.zeros((2, 2))
        for a in range(2):
            for b in range(2):
                e_a = np.eye(2)[a] * eps
                e_b = np.eye(2)[b] * eps
                fd[a, b] = (
                    neg_ll(lam_hat + e_a + e_b)
                    - neg_ll(lam_hat + e_a - e_b)
                    - neg_ll(lam_hat - e_a + e_b)
                    + neg_ll(lam_hat - e_a - e_b)
                ) / (4 * eps * eps)
        np.testing.assert_allclose(H, fd, rtol=1e-4, atol=1e-6)

    def test_hand_checked_block(self):
        H = _weight_precision(np.array([0.5, 0.5]), 1.0, 0.0)
        np.testing.assert_allclose(H, [[0.25]])

    def test_samples_live_on_simplex(self):
        model = fit_topics(small_corpus(11), 3, seed=11)
        post = sample_weights(model, 0, 200, seed=1)
        assert post.samples.shape == (200, 3)
        np.testing.assert_allclose(post.samples.sum(axis=1), 1.0, atol=1e-12)
        assert post.samples.min() >= 0

    def test_moments_match_gaussian(self):
        model = fit_topics(small_corpus(12), 3, seed=12)
        B = 100_000
        post = sample_weights(model, 3, B, seed=2)
        lam = np.log(post.samples[:, 1:] / post.samples[:, :1])
        cov = np.linalg.inv(post.precision)
        sd = np.sqrt(np.diag(cov))
        assert np.all(np.abs(lam.mean(axis=0) - post.mean) < 3 * sd / np.sqrt(B) + 1e-12)
        emp = np.cov(lam.T)
        frob = np.linalg.norm(emp - cov) / np.linalg.norm(cov)
        assert frob < 0.05

    def test_validation(self):
        model = fit_topics(small_corpus(13), 2, seed=13)
        with pytest.raises(ValueError):
            sample_weights(model, 0, 0)
        with pytest.raises(IndexError):
            sample_weights(model, model.n_docs, 5)

    def test_single_topic_degenerate(self):
        model = fit_topics(small_corpus(14), 1, seed=14)
        post = sample_weights(model, 0, 7)
        np.testing.assert_array_equal(post.samples, np.ones((7, 1)))

    def test_sample_weights_all_shape_and_determinism(self):
        model = fit_topics(small_corpus(15, n=20), 2, seed=15)
        a = sample_weights_all(model, 5, seed=3)
        b = sample_weights_all(model, 5, seed=3)
        assert a.shape == (20, 5, 2)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(a.sum(axis=2), 1.0, atol=1e-12)


class TestTopicLift:
    def test_uniform_topic_has_unit_lift_on_uniform_corpus(self):
        X = np.full((4, 5), 2)
        corpus = make_corpus(X)
        model = fit_topics(corpus, 1)
        np.testing.assert_allclose(topic_lift(model, corpus), 1.0, atol=1e-9)

    def test_hand_example(self):
        corpus = make_corpus(np.array([[3, 1], [1, 3]]))
        model = fit_topics(corpus, 1)
        lift = topic_lift(model, corpus)
        # token shares are (0.5, 0.5); lift doubles theta
        np.testing.assert_allclose(lift, model.theta / 0.5, rtol=1e-12)

    def test_shape_mismatch(self, tiny_corpus):
        model = fit_topics(tiny_corpus, 1)
        with pytest.raises(ValueError):
            topic_lift(model, make_corpus(np.ones((2, 2), dtype=int)))
