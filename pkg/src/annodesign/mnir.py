"""Multinomial inverse regression on sentiment-collapsed token counts.

Counts are collapsed into (subject, sentiment) cells; the cell token
distribution follows a logistic-linear model

    eta_cj = alpha_0j + y_c phi_0j + alpha_sj + y_c phi_sj

where the subject rows apply only to that subject's cells (the generic
stratum has no subject block).  Loadings phi carry a diminishing-return
log penalty yielding exact zeros; intercepts get a tiny ridge to pin the
softmax location.  The sufficient-reduction score of a document is the
loading-weighted token frequency projection z = phi' (x / m).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .corpus import Corpus
from .storage import read_npz, write_npz

MNIR_FORMAT_VERSION = 1

_RIDGE = 1e-6
_STEP_CAP = 5.0


@dataclass(frozen=True)
class SentimentScale:
    """Ordered numeric sentiment codes, default (-1, 0, 1)."""

    levels: tuple[float, ...] = (-1.0, 0.0, 1.0)

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        if len(levels) < 2:
            raise ValueError("scale needs at least 2 levels")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("scale levels must be strictly increasing")
        object.__setattr__(self, "levels", levels)

    def __contains__(self, value) -> bool:
        return float(value) in self.levels

    def index(self, value) -> int:
        return self.levels.index(float(value))


@dataclass(frozen=True)
class CollapsedCounts:
    """Token counts summed within each (subject, sentiment) cell.

    ``subj`` holds integer codes: 0 for the generic stratum, 1..S indexing
    ``subject_names``.  Cells are ordered generic-first, subjects in name
    order, sentiment ascending within each stratum.
    """

    x: np.ndarray
    m: np.ndarray
    y: np.ndarray
    subj: np.ndarray
    subject_names: list[str]
    scale: SentimentScale
    n_excluded: int
    vocab: list[str] = field(default_factory=list)

    @property
    def n_cells(self) -> int:
        return self.x.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.x.shape[1]

    @property
    def strata(self) -> list[tuple[str | None, float]]:
        names = [None] + list(self.subject_names)
        return [(names[s], float(y)) for s, y in zip(self.subj, self.y)]


def collapse_counts(
    corpus: Corpus, scale: SentimentScale | None = None, with_subjects: bool = False
) -> CollapsedCounts:
    """Sum document counts into (subject, sentiment) cells.

    Unlabeled documents are excluded and counted in ``n_excluded``; labels
    off the scale raise.  Without subjects every document lands in the
    generic stratum.
    """
    scale = scale or SentimentScale()
    n, p = corpus.shape
    groups: dict[tuple[str | None, float], list[int]] = {}
    excluded = 0
    for i, label in enumerate(corpus.labels):
        if label is None:
            excluded += 1
            continue
        if label not in scale:
            raise ValueError(f"label {label!r} of document {corpus.doc_ids[i]} is off the scale")
        subject = corpus.subjects[i] if with_subjects else None
        groups.setdefault((subject, float(label)), []).append(i)
    if not groups:
        raise ValueError("no labeled documents to collapse")
    subject_names = sorted({s for s, _ in groups if s is not None})
    code = {name: c for c, name in enumerate(subject_names, start=1)}
    keys = sorted(groups, key=lambda k: (0 if k[0] is None else code[k[0]], k[1]))
    x = np.zeros((len(keys), p))
    m = np.zeros(len(keys))
    y = np.zeros(len(keys))
    subj = np.zeros(len(keys), dtype=np.int64)
    for c, key in enumerate(keys):
        rows = groups[key]
        x[c] = np.asarray(corpus.counts[rows].sum(axis=0)).ravel()
        m[c] = x[c].sum()
        y[c] = key[1]
        subj[c] = 0 if key[0] is None else code[key[0]]
    return CollapsedCounts(
        x=np.ascontiguousarray(x),
        m=m,
        y=y,
        subj=subj,
        subject_names=subject_names,
        scale=scale,
        n_excluded=excluded,
        vocab=list(corpus.vocabulary.tokens),
    )


@dataclass(frozen=True)
class PenaltyConfig:
    """Loading penalty: lam * log(1 + |phi|/tau), or plain L1 in "l1" mode.

    Both modes share the slope lam/tau at zero; "l1" keeps that rate
    everywhere (the tau -> infinity limit of the log penalty).
    """

    lam: float = 1.0
    tau: float = 0.5
    mode: str = "gamma-lasso"

    def __post_init__(self):
        if self.lam < 0 or self.tau <= 0:
            raise ValueError("penalty requires lam >= 0 and tau > 0")
        if self.mode not in ("gamma-lasso", "l1"):
            raise ValueError(f"unknown penalty mode {self.mode!r}")

    def kernel_args(self) -> tuple[float, float]:
        """(lam, tau) as consumed by the sweep kernel; tau <= 0 flags L1."""
        if self.mode == "l1":
            return self.lam / self.tau, 0.0
        return self.lam, self.tau

    def value(self, phi: np.ndarray) -> float:
        lam, tau = self.kernel_args()
        if tau > 0:
            return float(lam * np.sum(np.log1p(np.abs(phi) / tau)))
        return float(lam * np.sum(np.abs(phi)))

    def slope(self, phi) -> np.ndarray:
        """Penalty derivative at |phi| (the threshold rate at 0)."""
        lam, tau = self.kernel_args()
        if tau > 0:
            return lam / (tau + np.abs(phi))
        return np.broadcast_to(lam, np.shape(phi)).astype(float)


@dataclass(frozen=True)
class MnirFitReport:
    sweeps: int
    converged: bool
    rel_change: float
    max_step: float
    objective_path: list[float] = field(repr=False)


@dataclass(frozen=True)
class MnirModel:
    """Fitted inverse regression; row 0 is the shared (main) block."""

    alpha: np.ndarray
    phi: np.ndarray
    subject_names: list[str]
    vocab: list[str]
    scale: SentimentScale
    penalty: PenaltyConfig
    interactions: bool
    fit_report: MnirFitReport = field(repr=False)

    @property
    def n_tokens(self) -> int:
        return self.alpha.shape[1]

    def nonzero_counts(self) -> list[int]:
        """Count of exactly-nonzero loadings per parameter row."""
        return [int(np.count_nonzero(row)) for row in self.phi]

    def row_for_subject(self, subject: str | None) -> int:
        """Parameter row for a subject; 0 (generic) when unknown or absent."""
        if subject is None or subject not in self.subject_names:
            return 0
        return self.subject_names.index(subject) + 1

    def save(self, path) -> None:
        arrays = {
            "alpha": self.alpha,
            "phi": self.phi,
            "vocab": np.asarray(self.vocab, dtype=np.str_),
            "subject_names": np.asarray(self.subject_names, dtype=np.str_),
        }
        meta = {
            "scale": list(self.scale.levels),
            "penalty": {
                "lam": self.penalty.lam,
                "tau": self.penalty.tau,
                "mode": self.penalty.mode,
            },
            "interactions": self.interactions,
            "sweeps": self.fit_report.sweeps,
            "converged": self.fit_report.converged,
            "rel_change": self.fit_report.rel_change,
            "max_step": self.fit_report.max_step,
            "objective_path": self.fit_report.objective_path,
        }
        write_npz(path, "mnir-model", MNIR_FORMAT_VERSION, arrays, meta)

    @classmethod
    def load(cls, path) -> "MnirModel":
        data, meta, _ = read_npz(path, "mnir-model", MNIR_FORMAT_VERSION)
        report = MnirFitReport(
            sweeps=int(meta["sweeps"]),
            converged=bool(meta["converged"]),
            rel_change=float(meta["rel_change"]),
            max_step=float(meta["max_step"]),
            objective_path=[float(v) for v in meta["objective_path"]],
        )
        return cls(
            alpha=np.ascontiguousarray(data["alpha"], dtype=np.float64),
            phi=np.ascontiguousarray(data["phi"], dtype=np.float64),
            subject_names=[str(s) for s in data["subject_names"]],
            vocab=[str(t) for t in data["vocab"]],
            scale=SentimentScale(tuple(meta["scale"])),
            penalty=PenaltyConfig(**meta["penalty"]),
            interactions=bool(meta["interactions"]),
            fit_report=report,
        )


def _build_eta(cells: CollapsedCounts, alpha: np.ndarray, phi: np.ndarray) -> np.ndarray:
    eta = alpha[0][None, :] + cells.y[:, None] * phi[0][None, :]
    for s in range(1, alpha.shape[0]):
        rows = cells.subj == s
        if np.any(rows):
            eta[rows] += alpha[s][None, :] + cells.y[rows, None] * phi[s][None, :]
    return eta


def cell_negloglik(x: np.ndarray, m: np.ndarray, eta: np.ndarray) -> float:
    """Negative multinomial log-likelihood sum_c [m_c lse(eta_c) - x_c . eta_c]."""
    return float(np.dot(m, logsumexp(eta, axis=1)) - np.sum(x * eta))


def _objective(cells: CollapsedCounts, alpha, phi, penalty: PenaltyConfig) -> float:
    eta = _build_eta(cells, alpha, phi)
    val = cell_negloglik(cells.x, cells.m, eta)
    val += penalty.value(phi)
    val += 0.5 * _RIDGE * float(np.sum(alpha * alpha))
    return val


def loading_gradients(model: MnirModel, cells: CollapsedCounts):
    """Gradients of the unpenalized negative log-likelihood.

    Returns (g_alpha, g_phi), each shaped like the parameter rows; used by
    stationarity checks.
    """
    eta = _build_eta(cells, model.alpha, model.phi)
    q = np.exp(eta - logsumexp(eta, axis=1, keepdims=True))
    resid = cells.m[:, None] * q - cells.x
    g_alpha = np.zeros_like(model.alpha)
    g_phi = np.zeros_like(model.phi)
    g_alpha[0] = resid.sum(axis=0)
    g_phi[0] = (cells.y[:, None] * resid).sum(axis=0)
    for s in range(1, model.alpha.shape[0]):
        rows = cells.subj == s
        g_alpha[s] = resid[rows].sum(axis=0)
        g_phi[s] = (cells.y[rows, None] * resid[rows]).sum(axis=0)
    return g_alpha, g_phi


def fit_mnir(
    cells: CollapsedCounts,
    penalty: PenaltyConfig | None = None,
    interactions: bool | None = None,
    tol: float = 1e-7,
    step_tol: float = 1e-10,
    max_sweeps: int = 10_000,
) -> MnirModel:
    """Penalized MAP fit by cyclic coordinate descent.

    ``interactions=None`` enables subject blocks exactly when subject
    cells are present.  Convergence requires both the relative objective
    change below ``tol`` and the largest accepted coordinate step below
    ``step_tol``; hitting ``max_sweeps`` returns the last iterate flagged
    unconverged.  The penalized objective is non-increasing across sweeps.
    """
    penalty = penalty or PenaltyConfig()
    if cells.n_tokens == 0:
        raise ValueError("empty vocabulary")
    if len(np.unique(cells.y)) < 2:
        raise ValueError("need at least 2 distinct sentiment levels")
    if interactions is None:
        interactions = bool(cells.subject_names)
    n_rows = 1 + len(cells.subject_names) if interactions else 1
    p = cells.n_tokens

    alpha = np.zeros((n_rows, p))
    phi = np.zeros((n_rows, p))
    x = np.ascontiguousarray(cells.x, dtype=np.float64)
    m = np.ascontiguousarray(cells.m, dtype=np.float64)
    y = np.ascontiguousarray(cells.y, dtype=np.float64)
    subj = np.ascontiguousarray(cells.subj if interactions else np.zeros_like(cells.subj),
                                dtype=np.int64)
    lam, tau = penalty.kernel_args()

    path = [_objective(cells, alpha, phi, penalty)]
    converged = False
    rel = float("inf")
    max_step = float("inf")
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        eta = _build_eta(cells, alpha, phi)
        eta -= eta.max(axis=1, keepdims=True)
        exp_eta = np.ascontiguousarray(np.exp(eta))
        z = np.ascontiguousarray(exp_eta.sum(axis=1))
        max_step = float(
            _kernels.mnir_sweep(x, m, y, subj, alpha, phi, exp_eta, z,
                                lam, tau, _RIDGE, _STEP_CAP)
        )
        # per-row intercept shifts are likelihood-invariant (softmax location)
        # and the ridge optimum is centered; recentering removes the one flat
        # direction that coordinate descent would otherwise crawl along
        alpha -= alpha.mean(axis=1, keepdims=True)
        obj = _objective(cells, alpha, phi, penalty)
        if not np.isfinite(obj):
            raise RuntimeError(f"non-finite objective at sweep {sweeps}")
        rel = abs(obj - path[-1]) / max(1.0, abs(path[-1]))
        path.append(obj)
        if rel < tol and max_step < step_tol:
            converged = True
            break

    report = MnirFitReport(
        sweeps=sweeps,
        converged=converged,
        rel_change=float(rel),
        max_step=float(max_step),
        objective_path=[float(v) for v in path],
    )
    return MnirModel(
        alpha=alpha,
        phi=phi,
        subject_names=list(cells.subject_names) if interactions else [],
        vocab=list(cells.vocab),
        scale=cells.scale,
        penalty=penalty,
        interactions=interactions,
        fit_report=report,
    )


@dataclass(frozen=True)
class SRScores:
    """Per-document sufficient-reduction scores."""

    doc_ids: list[str]
    subjects: list[str | None]
    z0: np.ndarray
    zs: np.ndarray

    def __len__(self) -> int:
        return len(self.doc_ids)


def sr_scores(model: MnirModel, corpus: Corpus) -> SRScores:
    """Project document frequencies onto the fitted loading directions.

    z0 uses the main loadings; zs uses the document's subject block and is
    0 for unknown/generic subjects or when interactions are absent.
    Scores are frequency-based, hence invariant to scaling a document's
    counts.
    """
    tokens = corpus.vocabulary.tokens
    if model.vocab:
        if len(model.vocab) != len(tokens):
            raise ValueError(
                f"vocabulary size mismatch: model {len(model.vocab)}, corpus {len(tokens)}"
            )
        for i, (a, b) in enumerate(zip(model.vocab, tokens)):
            if a != b:
                raise ValueError(f"vocabulary mismatch at position {i}: {a!r} != {b!r}")
    elif model.n_tokens != len(tokens):
        raise ValueError(
            f"vocabulary size mismatch: model {model.n_tokens}, corpus {len(tokens)}"
        )
    F = corpus.frequencies()
    z0 = np.asarray(F @ model.phi[0]).ravel()
    zs = np.zeros(corpus.shape[0])
    if model.interactions:
        subjects = np.array([s if s is not None else "" for s in corpus.subjects])
        for s, name in enumerate(model.subject_names, start=1):
            rows = np.flatnonzero(subjects == name)
            if rows.size:
                zs[rows] = np.asarray(F[rows] @ model.phi[s]).ravel()
    return SRScores(
        doc_ids=list(corpus.doc_ids),
        subjects=list(corpus.subjects),
        z0=z0,
        zs=zs,
    )
