"""Proportional-odds regression from sufficient-reduction scores to sentiment.

The cumulative model is p(y <= c) = sigmoid(gamma_c - u) with
u = beta_0 z_0 + beta_s z_s, ordered cutpoints gamma, and a diffuse
t-prior on the slope coefficients (cutpoints unpenalized).  Two occurring
levels reduce the model to binary logistic regression.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from .mnir import SRScores
from .storage import read_npz, write_npz

FORWARD_FORMAT_VERSION = 1

_P_FLOOR = 1e-300


@dataclass(frozen=True)
class TPriorConfig:
    """Student-t prior on slope coefficients."""

    df: float = 7.0
    scale: float = 2.5
    center: float = 0.0

    def __post_init__(self):
        if self.df <= 0 or self.scale <= 0:
            raise ValueError("t-prior requires df > 0 and scale > 0")

    def neg_log(self, beta: np.ndarray) -> float:
        b = (np.asarray(beta) - self.center) / self.scale
        return float(0.5 * (self.df + 1) * np.sum(np.log1p(b * b / self.df)))

    def grad(self, beta: np.ndarray) -> np.ndarray:
        b = np.asarray(beta) - self.center
        return (self.df + 1) * b / (self.df * self.scale**2 + b * b)


@dataclass(frozen=True)
class ForwardFitReport:
    iterations: int
    converged: bool
    grad_norm: float
    objective: float


@dataclass(frozen=True)
class ForwardModel:
    """Fitted cumulative-logit model over the levels seen at fit time."""

    levels: tuple[float, ...]
    cutpoints: np.ndarray
    beta0: float
    beta_subjects: dict[str, float]
    prior: TPriorConfig
    fit_report: ForwardFitReport = field(repr=False)

    def __post_init__(self):
        cuts = np.asarray(self.cutpoints, dtype=np.float64)
        if cuts.shape != (len(self.levels) - 1,):
            raise ValueError("need one cutpoint per non-top level")
        if np.any(np.diff(cuts) <= 0):
            raise ValueError("cutpoints must be strictly increasing")
        object.__setattr__(self, "cutpoints", cuts)

    def linear_scores(self, scores: SRScores) -> np.ndarray:
        """u_i = beta0 * z0_i + beta_{s_i} * zs_i (0 for unknown subjects)."""
        u = self.beta0 * scores.z0
        if self.beta_subjects:
            bs = np.array(
                [self.beta_subjects.get(s, 0.0) if s is not None else 0.0
                 for s in scores.subjects]
            )
            u = u + bs * scores.zs
        return u

    def save(self, path) -> None:
        names = sorted(self.beta_subjects)
        arrays = {
            "cutpoints": self.cutpoints,
            "levels": np.asarray(self.levels, dtype=np.float64),
            "beta_subject_values": np.array([self.beta_subjects[s] for s in names]),
            "beta_subject_names": np.asarray(names, dtype=np.str_),
        }
        meta = {
            "beta0": self.beta0,
            "prior": {"df": self.prior.df, "scale": self.prior.scale,
                      "center": self.prior.center},
            "iterations": self.fit_report.iterations,
            "converged": self.fit_report.converged,
            "grad_norm": self.fit_report.grad_norm,
            "objective": self.fit_report.objective,
        }
        write_npz(path, "forward-model", FORWARD_FORMAT_VERSION, arrays, meta)

    @classmethod
    def load(cls, path) -> "ForwardModel":
        data, meta, _ = read_npz(path, "forward-model", FORWARD_FORMAT_VERSION)
        report = ForwardFitReport(
            iterations=int(meta["iterations"]),
            converged=bool(meta["converged"]),
            grad_norm=float(meta["grad_norm"]),
            objective=float(meta["objective"]),
        )
        names = [str(s) for s in data["beta_subject_names"]]
        values = np.asarray(data["beta_subject_values"], dtype=np.float64)
        return cls(
            levels=tuple(float(v) for v in data["levels"]),
            cutpoints=np.asarray(data["cutpoints"], dtype=np.float64),
            beta0=float(meta["beta0"]),
            beta_subjects=dict(zip(names, values)),
            prior=TPriorConfig(**meta["prior"]),
            fit_report=report,
        )


def _level_probs(gamma: np.ndarray, u: np.ndarray, cidx: np.ndarray):
    """Stable per-document p(y = level), with sigmoid weights at both cuts.

    Returns (p, w_a, w_b) where w_a/w_b are the sigmoid derivatives at the
    lower/upper cutpoint arguments (0 at the open ends).
    """
    L = gamma.shape[0] + 1
    n = u.shape[0]
    has_upper = cidx < L - 1
    has_lower = cidx > 0
    b = np.where(has_upper, gamma[np.minimum(cidx, L - 2)] - u, np.inf)
    a = np.where(has_lower, gamma[np.maximum(cidx - 1, 0)] - u, -np.inf)
    logp = np.zeros(n)
    middle = has_upper & has_lower
    logp[~has_lower] = log_expit(b[~has_lower])
    logp[~has_upper] = log_expit(-a[~has_upper])
    if np.any(middle):
        logp[middle] = (
            log_expit(b[middle])
            + log_expit(-a[middle])
            + np.log1p(-np.exp(a[middle] - b[middle]))
        )
    p = np.maximum(np.exp(logp), _P_FLOOR)
    sb = expit(b)
    sa = expit(a)
    w_b = np.where(has_upper, sb * (1.0 - sb), 0.0)
    w_a = np.where(has_lower, sa * (1.0 - sa), 0.0)
    return p, w_a, w_b, logp


def _neg_loglik_and_grad(theta, Z, cidx, L, prior):
    """Negative penalized log-likelihood and analytic gradient.

    theta = [gamma_1, log-gaps (L-2), beta (per Z column)]; the log-gap
    parametrization keeps cutpoints strictly increasing.
    """
    n_beta = Z.shape[1]
    g1 = theta[0]
    gaps = np.exp(theta[1:L - 1])
    gamma = g1 + np.concatenate([[0.0], np.cumsum(gaps)])
    beta = theta[L - 1:]
    u = Z @ beta
    p, w_a, w_b, logp = _level_probs(gamma, u, cidx)
    neg = -float(np.sum(logp)) + prior.neg_log(beta)

    # dll/dgamma_c scatter-added at the upper and lower cut of each doc
    G = np.zeros(L - 1)
    upper = cidx < L - 1
    np.add.at(G, cidx[upper], (w_b / p)[upper])
    lower = cidx > 0
    np.add.at(G, cidx[lower] - 1, (-w_a / p)[lower])
    du = (w_a - w_b) / p

    grad = np.empty_like(theta)
    grad[0] = -np.sum(G)
    # gamma_c includes gap_l exactly when c > l
    tail = np.cumsum(G[::-1])[::-1]
    grad[1:L - 1] = -tail[1:] * gaps
    grad[L - 1:] = -(Z.T @ du) + prior.grad(beta)
    if n_beta == 0:
        grad = grad[: L - 1]
    return neg, grad


def _fd_hessian(fun_grad, theta, step=1e-6):
    """Central finite differences of the analytic gradient."""
    dim = theta.shape[0]
    H = np.empty((dim, dim))
    for i in range(dim):
        t_plus = theta.copy()
        t_plus[i] += step
        t_minus = theta.copy()
        t_minus[i] -= step
        H[:, i] = (fun_grad(t_plus)[1] - fun_grad(t_minus)[1]) / (2.0 * step)
    return 0.5 * (H + H.T)


def fit_forward(
    scores: SRScores,
    labels,
    scale=None,
    prior: TPriorConfig | None = None,
    tol: float = 1e-9,
    max_iter: int = 200,
) -> ForwardModel:
    """Damped-Newton MAP fit of cutpoints and slopes.

    ``labels`` aligns with ``scores``; None entries are dropped.  The
    model's levels are the distinct labels seen.  Cutpoints start at the
    logits of empirical cumulative frequencies, slopes at zero.
    """
    prior = prior or TPriorConfig()
    labels = list(labels)
    if len(labels) != len(scores):
        raise ValueError("labels and scores are misaligned")
    keep = [i for i, lab in enumerate(labels) if lab is not None]
    if not keep:
        raise ValueError("no labeled documents")
    lab = np.array([float(labels[i]) for i in keep])
    if scale is not None:
        for v in np.unique(lab):
            if v not in scale:
                raise ValueError(f"label {v} is off the scale")
    levels = tuple(float(v) for v in np.unique(lab))
    L = len(levels)
    if L < 2:
        raise ValueError("labels contain a single class")
    cidx = np.searchsorted(np.asarray(levels), lab)

    z0 = scores.z0[keep]
    zs = scores.zs[keep]
    subjects = [scores.subjects[i] for i in keep]
    subject_names = sorted({s for s in subjects if s is not None})
    Z = np.zeros((len(keep), 1 + len(subject_names)))
    Z[:, 0] = z0
    for col, name in enumerate(subject_names, start=1):
        rows = [r for r, s in enumerate(subjects) if s == name]
        Z[rows, col] = zs[rows]

    # cutpoint init from empirical cumulative frequencies, clipped interior
    freqs = np.bincount(cidx, minlength=L) / len(keep)
    cum = np.clip(np.cumsum(freqs)[:-1], 1e-6, 1 - 1e-6)
    gamma0 = np.log(cum / (1.0 - cum))
    gamma0 = np.maximum.accumulate(gamma0 + 1e-9 * np.arange(L - 1))
    theta = np.concatenate([
        [gamma0[0]],
        np.log(np.maximum(np.diff(gamma0), 1e-6)),
        np.zeros(Z.shape[1]),
    ])

    def fun_grad(t):
        return _neg_loglik_and_grad(t, Z, cidx, L, prior)

    neg, grad = fun_grad(theta)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        gnorm = float(np.abs(grad).max())
        if gnorm < tol:
            converged = True
            break
        H = _fd_hessian(fun_grad, theta)
        try:
            direction = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            direction = grad
        if float(grad @ direction) <= 0.0:
            direction = grad
        step = 1.0
        improved = False
        for _ in range(60):
            trial = theta - step * direction
            neg_trial, grad_trial = fun_grad(trial)
            if np.isfinite(neg_trial) and neg_trial <= neg:
                theta, neg, grad = trial, neg_trial, grad_trial
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    gnorm = float(np.abs(grad).max())
    converged = converged or gnorm < tol

    g1 = theta[0]
    gaps = np.exp(theta[1:L - 1])
    gamma = g1 + np.concatenate([[0.0], np.cumsum(gaps)])
    beta = theta[L - 1:]
    report = ForwardFitReport(
        iterations=iterations,
        converged=converged,
        grad_norm=gnorm,
        objective=float(-neg),
    )
    return ForwardModel(
        levels=levels,
        cutpoints=gamma,
        beta0=float(beta[0]),
        beta_subjects={name: float(b) for name, b in zip(subject_names, beta[1:])},
        prior=prior,
        fit_report=report,
    )


def predict_probs(model: ForwardModel, scores: SRScores) -> np.ndarray:
    """Per-document probabilities over model levels, shape (n, L)."""
    u = model.linear_scores(scores)
    cum = expit(model.cutpoints[None, :] - u[:, None])
    L = len(model.levels)
    probs = np.empty((len(scores), L))
    probs[:, 0] = cum[:, 0]
    if L > 2:
        probs[:, 1:-1] = np.diff(cum, axis=1)
    probs[:, -1] = 1.0 - cum[:, -1]
    return np.maximum(probs, 0.0)


@dataclass(frozen=True)
class Classified:
    """Hard classifications with per-document predictive entropy (nats)."""

    labels: np.ndarray
    entropy: np.ndarray


def argmax_middle_tie(probs: np.ndarray) -> np.ndarray:
    """Per-row argmax with exact ties broken toward the middle index.

    Among tied maxima the index nearest (L-1)/2 wins, lower index first.
    """
    L = probs.shape[1]
    tie_rank = np.array(sorted(range(L), key=lambda j: (abs(j - (L - 1) / 2), j)))
    ordered = probs[:, tie_rank]
    return tie_rank[np.argmax(ordered, axis=1)]


def classify(model: ForwardModel, scores: SRScores) -> Classified:
    """Maximum-probability level, ties toward the middle of the scale."""
    probs = predict_probs(model, scores)
    picks = argmax_middle_tie(probs)
    labels = np.array([model.levels[j] for j in picks])
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0.0, probs * np.log(probs), 0.0)
    entropy = -terms.sum(axis=1)
    return Classified(labels=labels, entropy=np.maximum(entropy, 0.0))
