"""Multinomial topic factorization fit by joint MAP, with Laplace tools.

Documents are modeled as x_i ~ MN(sum_k omega_ik * theta_k, m_i) with
Dirichlet priors on every probability vector.  Estimation runs in the
natural (log-odds) parametrization, where the prior density picks up a
Jacobian factor equivalent to adding 1 to each Dirichlet concentration;
the working objective is therefore

    L = sum_ij x_ij log q_ij + a_w sum_ik log omega_ik
        + a_t sum_kj log theta_kj - n log B_K(a_w) - K log B_p(a_t)

with a_w, a_t the simplex-space concentrations and B_d(a) the symmetric
Dirichlet normalizer.  Multinomial coefficients are omitted throughout;
they do not depend on K and cancel in every comparison made here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import _kernels
from .corpus import Corpus
from .storage import read_npz, write_npz

TOPIC_FORMAT_VERSION = 1

_PROB_FLOOR = 1e-12
_JITTER = 1e-8


@dataclass(frozen=True)
class TopicPrior:
    """Dirichlet concentrations; None selects 1/K and 1/(K*p)."""

    omega_concentration: float | None = None
    theta_concentration: float | None = None

    def resolve(self, K: int, p: int) -> tuple[float, float]:
        a_w = self.omega_concentration
        a_t = self.theta_concentration
        if a_w is None:
            a_w = 1.0 / K
        if a_t is None:
            a_t = 1.0 / (K * p)
        if a_w <= 0 or a_t <= 0:
            raise ValueError("concentrations must be positive")
        return float(a_w), float(a_t)


@dataclass(frozen=True)
class FitReport:
    iterations: int
    converged: bool
    rel_change: float
    objective_path: list[float]


@dataclass(frozen=True)
class TopicModel:
    """Joint MAP estimate: topics theta (K, p) and document weights omega (n, K)."""

    K: int
    theta: np.ndarray
    omega: np.ndarray
    totals: np.ndarray
    doc_ids: list[str]
    omega_concentration: float
    theta_concentration: float
    log_posterior: float
    fit_report: FitReport = field(repr=False)

    @property
    def n_docs(self) -> int:
        return self.omega.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.theta.shape[1]

    @property
    def lambda_(self) -> np.ndarray:
        """Natural parameters log(omega_k / omega_1), shape (n, K-1)."""
        w = np.maximum(self.omega, _PROB_FLOOR)
        return np.log(w[:, 1:]) - np.log(w[:, :1])

    def save(self, path) -> None:
        arrays = {
            "theta": self.theta,
            "omega": self.omega,
            "totals": self.totals,
            "doc_ids": np.asarray(self.doc_ids, dtype=np.str_),
        }
        meta = {
            "K": self.K,
            "omega_concentration": self.omega_concentration,
            "theta_concentration": self.theta_concentration,
            "log_posterior": self.log_posterior,
            "iterations": self.fit_report.iterations,
            "converged": self.fit_report.converged,
            "rel_change": self.fit_report.rel_change,
            "objective_path": self.fit_report.objective_path,
        }
        write_npz(path, "topic-model", TOPIC_FORMAT_VERSION, arrays, meta)

    @classmethod
    def load(cls, path) -> "TopicModel":
        data, meta, _ = read_npz(path, "topic-model", TOPIC_FORMAT_VERSION)
        report = FitReport(
            iterations=int(meta["iterations"]),
            converged=bool(meta["converged"]),
            rel_change=float(meta["rel_change"]),
            objective_path=[float(v) for v in meta["objective_path"]],
        )
        return cls(
            K=int(meta["K"]),
            theta=np.ascontiguousarray(data["theta"], dtype=np.float64),
            omega=np.ascontiguousarray(data["omega"], dtype=np.float64),
            totals=np.asarray(data["totals"], dtype=np.float64),
            doc_ids=[str(d) for d in data["doc_ids"]],
            omega_concentration=float(meta["omega_concentration"]),
            theta_concentration=float(meta["theta_concentration"]),
            log_posterior=float(meta["log_posterior"]),
            fit_report=report,
        )


def _log_dirichlet_norm(dim: int, conc: float) -> float:
    """log B_dim(conc) for the symmetric Dirichlet."""
    return dim * gammaln(conc) - gammaln(dim * conc)


def _csr_parts(corpus: Corpus):
    X = corpus.counts
    indptr = np.ascontiguousarray(X.indptr, dtype=np.int64)
    indices = np.ascontiguousarray(X.indices, dtype=np.int64)
    data = np.ascontiguousarray(X.data, dtype=np.float64)
    return indptr, indices, data


def fit_topics(
    corpus: Corpus,
    K: int,
    prior: TopicPrior | None = None,
    tol: float = 1e-7,
    max_iter: int = 1000,
    seed: int = 0,
) -> TopicModel:
    """EM-style block ascent to the joint MAP of (omega, theta).

    Theta is initialized from K randomly sampled document rows plus the
    prior, omega uniform.  The objective is asserted non-decreasing each
    iteration; convergence is relative change below ``tol``.
    """
    n, p = corpus.shape
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > n:
        raise ValueError(f"K={K} exceeds the number of documents ({n})")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    a_w, a_t = (prior or TopicPrior()).resolve(K, p)

    rng = np.random.default_rng(seed)
    sample = rng.choice(n, size=K, replace=False)
    theta = corpus.counts[sample].toarray().astype(np.float64) + a_t
    theta /= theta.sum(axis=1, keepdims=True)
    theta = np.ascontiguousarray(theta)
    omega = np.full((n, K), 1.0 / K)

    indptr, indices, data = _csr_parts(corpus)
    totals = np.asarray(corpus.totals, dtype=np.float64)
    omega_stat = np.zeros_like(omega)
    theta_stat = np.zeros_like(theta)
    const = -n * _log_dirichlet_norm(K, a_w) - K * _log_dirichlet_norm(p, a_t)

    def objective_pass() -> float:
        omega_stat[:] = 0.0
        theta_stat[:] = 0.0
        ll = _kernels.topic_em_stats(
            indptr, indices, data, omega, theta, theta_stat, omega_stat
        )
        prior_w = a_w * float(np.sum(np.log(np.maximum(omega, _PROB_FLOOR))))
        prior_t = a_t * float(np.sum(np.log(np.maximum(theta, _PROB_FLOOR))))
        return ll + prior_w + prior_t + const

    path: list[float] = []
    converged = False
    rel = float("inf")
    for _ in range(max_iter):
        obj = objective_pass()
        if not np.isfinite(obj):
            raise RuntimeError(f"non-finite objective at iteration {len(path) + 1}")
        if path:
            if obj < path[-1] - 1e-9 * (1.0 + abs(path[-1])):
                raise RuntimeError(
                    f"objective decreased at iteration {len(path) + 1}: "
                    f"{path[-1]:.10g} -> {obj:.10g}"
                )
            rel = abs(obj - path[-1]) / max(1.0, abs(path[-1]))
        path.append(obj)
        if rel < tol:
            converged = True
            break
        omega = omega_stat + a_w
        omega /= omega.sum(axis=1, keepdims=True)
        theta = theta_stat + a_t
        theta /= theta.sum(axis=1, keepdims=True)
    else:
        # parameters moved after the last evaluation; score them once more
        obj = objective_pass()
        if not np.isfinite(obj):
            raise RuntimeError(f"non-finite objective at iteration {len(path) + 1}")
        path.append(obj)

    # deterministic presentation: topics ordered by total usage
    usage = omega.T @ totals
    order = np.argsort(-usage, kind="stable")
    theta = np.ascontiguousarray(theta[order])
    omega = np.ascontiguousarray(omega[:, order])

    report = FitReport(
        iterations=len(path),
        converged=converged,
        rel_change=float(rel),
        objective_path=[float(v) for v in path],
    )
    return TopicModel(
        K=K,
        theta=theta,
        omega=omega,
        totals=totals,
        doc_ids=list(corpus.doc_ids),
        omega_concentration=a_w,
        theta_concentration=a_t,
        log_posterior=float(path[-1]),
        fit_report=report,
    )


@dataclass(frozen=True)
class MarginalResult:
    """Laplace-approximate log p(X | K) with boundary-block diagnostics."""

    value: float
    flagged_doc_blocks: int
    flagged_topic_blocks: int


def _block_log_det(probs: np.ndarray, scale: float) -> tuple[float, bool]:
    """log det of scale * (diag(w) - w w') over the free coordinates.

    ``probs`` is the full probability vector; the free block drops its
    first coordinate.  Interior vectors use the closed form
    (dim-1) log(scale) + sum(log probs); boundary vectors fall back to a
    jittered dense determinant and are flagged.
    """
    dim = probs.shape[0]
    if dim == 1:
        return 0.0, False
    if probs.min() > _PROB_FLOOR:
        return (dim - 1) * np.log(scale) + float(np.sum(np.log(probs))), False
    w = probs[1:]
    H = scale * (np.diag(w) - np.outer(w, w)) + _JITTER * np.eye(dim - 1)
    sign, logdet = np.linalg.slogdet(H)
    if sign <= 0:
        raise RuntimeError("Hessian block not positive definite after jitter")
    return float(logdet), True


def log_marginal(model: TopicModel, corpus: Corpus) -> MarginalResult:
    """Laplace approximation L + (d/2) log 2pi - (1/2) log |H|.

    H is block-diagonal: one (K-1)-dim natural-parameter block per
    document with curvature scale m_i + a_w K, and one (p-1)-dim block per
    topic scaled by the topic's accumulated pseudo-count mass plus prior
    (an approximation; the exact cross-document theta curvature is dense).
    Constants independent of K (multinomial coefficients) are omitted.
    """
    n, p = corpus.shape
    K = model.K
    if model.omega.shape[0] != n or list(model.doc_ids) != list(corpus.doc_ids):
        raise ValueError("model was fit on a different corpus")
    a_w = model.omega_concentration
    a_t = model.theta_concentration

    indptr, indices, data = _csr_parts(corpus)
    omega_stat = np.zeros_like(model.omega)
    theta_stat = np.zeros_like(model.theta)
    ll = _kernels.topic_em_stats(
        indptr, indices, data, model.omega, model.theta, theta_stat, omega_stat
    )
    prior_w = a_w * float(np.sum(np.log(np.maximum(model.omega, _PROB_FLOOR))))
    prior_t = a_t * float(np.sum(np.log(np.maximum(model.theta, _PROB_FLOOR))))
    L = (
        ll
        + prior_w
        + prior_t
        - n * _log_dirichlet_norm(K, a_w)
        - K * _log_dirichlet_norm(p, a_t)
    )

    log_det = 0.0
    flagged_docs = 0
    for i in range(n):
        ld, flagged = _block_log_det(model.omega[i], model.totals[i] + a_w * K)
        log_det += ld
        flagged_docs += flagged
    flagged_topics = 0
    mass = theta_stat.sum(axis=1)
    for k in range(K):
        ld, flagged = _block_log_det(model.theta[k], mass[k] + a_t * p)
        log_det += ld
        flagged_topics += flagged

    d = n * (K - 1) + K * (p - 1)
    value = L + 0.5 * d * np.log(2.0 * np.pi) - 0.5 * log_det
    return MarginalResult(float(value), flagged_docs, flagged_topics)


@dataclass(frozen=True)
class KSelection:
    best_k: int
    best_model: TopicModel
    marginals: dict[int, MarginalResult]


def select_k(
    corpus: Corpus,
    k_grid: list[int],
    prior: TopicPrior | None = None,
    tol: float = 1e-7,
    max_iter: int = 1000,
    seed: int = 0,
) -> KSelection:
    """Fit every K on the grid and pick the largest Laplace marginal."""
    if not k_grid:
        raise ValueError("empty K grid")
    marginals: dict[int, MarginalResult] = {}
    models: dict[int, TopicModel] = {}
    for K in k_grid:
        model = fit_topics(corpus, K, prior=prior, tol=tol, max_iter=max_iter, seed=seed)
        models[K] = model
        marginals[K] = log_marginal(model, corpus)
    best_k = max(marginals, key=lambda K: marginals[K].value)
    return KSelection(best_k=best_k, best_model=models[best_k], marginals=marginals)


@dataclass(frozen=True)
class WeightPosterior:
    """Gaussian approximation to one document's weight posterior."""

    doc_id: str
    doc_index: int
    mean: np.ndarray
    precision: np.ndarray
    samples: np.ndarray


def _weight_precision(w: np.ndarray, m: float, a_w: float) -> np.ndarray:
    """Natural-parameter Hessian block (m + a_w K) * (diag(w') - w'w'')."""
    K = w.shape[0]
    free = w[1:]
    return (m + a_w * K) * (np.diag(free) - np.outer(free, free))


def sample_weights(model: TopicModel, doc_index: int, B: int, seed: int = 0) -> WeightPosterior:
    """Draw B simplex samples from the Laplace posterior of one document.

    lambda ~ N(lambda_hat, H^{-1}) mapped through the softmax with a fixed
    leading zero.  A singular H gets one diagonal-jitter retry.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    n = model.n_docs
    if not 0 <= doc_index < n:
        raise IndexError(f"doc_index {doc_index} out of range for {n} documents")
    w = np.maximum(model.omega[doc_index], _PROB_FLOOR)
    K = model.K
    rng = np.random.default_rng(seed)
    if K == 1:
        return WeightPosterior(
            doc_id=model.doc_ids[doc_index],
            doc_index=doc_index,
            mean=np.zeros(0),
            precision=np.zeros((0, 0)),
            samples=np.ones((B, 1)),
        )
    mean = np.log(w[1:]) - np.log(w[0])
    H = _weight_precision(w, float(model.totals[doc_index]), model.omega_concentration)
    try:
        chol = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        H = H + _JITTER * np.eye(K - 1)
        try:
            chol = np.linalg.cholesky(H)
        except np.linalg.LinAlgError:
            raise RuntimeError(
                f"weight precision not positive definite for document {doc_index}"
            ) from None
    z = rng.standard_normal((B, K - 1))
    lam = mean + np.linalg.solve(chol.T, z.T).T
    full = np.concatenate([np.zeros((B, 1)), lam], axis=1)
    full -= full.max(axis=1, keepdims=True)
    samples = np.exp(full)
    samples /= samples.sum(axis=1, keepdims=True)
    return WeightPosterior(
        doc_id=model.doc_ids[doc_index],
        doc_index=doc_index,
        mean=mean,
        precision=H,
        samples=samples,
    )


def sample_weights_all(model: TopicModel, B: int, seed=0) -> np.ndarray:
    """Stacked posterior draws for every document, shape (n, B, K).

    ``seed`` may be an int or a numpy SeedSequence.
    """
    n = model.n_docs
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    seeds = seed.spawn(n)
    out = np.empty((n, B, model.K))
    for i in range(n):
        post = sample_weights(model, i, B, seed=seeds[i])
        out[i] = post.samples
    return out


def topic_lift(model: TopicModel, corpus: Corpus) -> np.ndarray:
    """theta_kj over the token's corpus-wide share, shape (K, p)."""
    if model.theta.shape[1] != corpus.shape[1]:
        raise ValueError("model vocabulary size does not match corpus")
    counts = np.asarray(corpus.counts.sum(axis=0)).ravel().astype(np.float64)
    total = counts.sum()
    if np.any(counts <= 0):
        raise ValueError("corpus contains a token with zero total count")
    return model.theta / (counts / total)[None, :]
