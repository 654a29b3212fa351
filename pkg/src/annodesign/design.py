"""Greedy D-optimal document ranking in a low-dimensional factor space.

The design criterion is the determinant of the information matrix
A_t = W_t' W_t over the selected rows.  Appending row w multiplies the
determinant by 1 + w' A_t^{-1} w, so each greedy step picks the candidate
maximizing that quadratic form (MAP variant) or its average over
posterior draws of the row (marginal variant).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .corpus import Corpus

# rank-one updates between full recomputations of info_inv / log_det
_REFRESH_EVERY = 50


@dataclass(frozen=True)
class FactorScores:
    """Per-document factor coordinates (n, K) plus a source tag."""

    matrix: np.ndarray
    source: str

    def __post_init__(self):
        matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ValueError("scores must be a 2-d array")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("scores contain non-finite entries")
        object.__setattr__(self, "matrix", matrix)

    @property
    def n_docs(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_factors(self) -> int:
        return self.matrix.shape[1]


def topic_scores(model) -> FactorScores:
    """MAP topic weights as factor coordinates."""
    return FactorScores(model.omega, "topic-map")


@dataclass
class DesignState:
    """Selected rows with maintained information matrix and inverse."""

    selected: list[int]
    info: np.ndarray
    info_inv: np.ndarray
    log_det: float
    seed_size: int
    updates_since_refresh: int = 0
    _selected_mask: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return len(self.selected)

    def mask(self, n: int) -> np.ndarray:
        if self._selected_mask is None or self._selected_mask.shape[0] != n:
            mask = np.zeros(n, dtype=bool)
            mask[self.selected] = True
            self._selected_mask = mask
        return self._selected_mask

    def add(self, index: int, row: np.ndarray) -> float:
        """Rank-one update for appending ``row``; returns the gain w'A^{-1}w."""
        gain = float(row @ self.info_inv @ row)
        self.selected.append(index)
        if self._selected_mask is not None:
            self._selected_mask[index] = True
        self.info += np.outer(row, row)
        self.updates_since_refresh += 1
        if self.updates_since_refresh >= _REFRESH_EVERY:
            self.refresh()
        else:
            u = self.info_inv @ row
            self.info_inv -= np.outer(u, u) / (1.0 + gain)
            self.log_det += float(np.log1p(gain))
        return gain

    def refresh(self) -> None:
        """Recompute the inverse and log-determinant from scratch."""
        sign, logdet = np.linalg.slogdet(self.info)
        if sign <= 0 or not np.isfinite(logdet):
            raise RuntimeError("information matrix became singular")
        self.info_inv = np.linalg.inv(self.info)
        self.log_det = float(logdet)
        self.updates_since_refresh = 0

    def check(self, tol: float = 1e-8) -> None:
        """Verify the maintained inverse and log-determinant."""
        K = self.info.shape[0]
        err = np.abs(self.info @ self.info_inv - np.eye(K)).max()
        if err >= tol:
            raise RuntimeError(f"inverse drift {err:.3g} exceeds {tol}")
        sign, logdet = np.linalg.slogdet(self.info)
        rel = abs(self.log_det - logdet) / max(1.0, abs(logdet))
        if sign <= 0 or rel >= tol:
            raise RuntimeError(f"log-determinant drift {rel:.3g} exceeds {tol}")


def seed_design(scores: FactorScores, K: int, seed: int = 0) -> DesignState:
    """Seed with K random distinct documents, extending if singular.

    Additional random documents are appended until the information matrix
    is nonsingular; ``seed_size`` reports how many were used.
    """
    n = scores.n_docs
    if n < K:
        raise ValueError(f"need at least K={K} documents, have {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    selected = [int(i) for i in order[:K]]
    rows = scores.matrix[selected]
    info = rows.T @ rows
    take = K
    while True:
        sign, logdet = np.linalg.slogdet(info)
        if sign > 0 and np.isfinite(logdet):
            break
        if take >= n:
            raise RuntimeError(
                "information matrix singular even after selecting every document"
            )
        extra = int(order[take])
        take += 1
        selected.append(extra)
        row = scores.matrix[extra]
        info += np.outer(row, row)
    state = DesignState(
        selected=selected,
        info=info,
        info_inv=np.linalg.inv(info),
        log_det=float(logdet),
        seed_size=len(selected),
    )
    state.mask(n)
    return state


@dataclass(frozen=True)
class RankStep:
    """One greedy selection: document index, selection score, running log-det."""

    index: int
    gain: float
    log_det: float


def second_moments(samples: np.ndarray) -> np.ndarray:
    """Per-document second-moment matrices (1/B) sum_b w_b w_b', shape (n, K, K)."""
    n, B, K = samples.shape
    return np.einsum("ibk,ibl->ikl", samples, samples) / B


def greedy_rank(
    scores: FactorScores,
    state: DesignState,
    t_max: int,
    variant: str = "map",
    samples: np.ndarray | None = None,
) -> list[RankStep]:
    """Extend the design greedily to ``t_max`` total documents.

    variant="map" scores candidates by w'A^{-1}w on the MAP rows;
    variant="marginal" averages the quadratic form over posterior draws
    (``samples``, shape (n, B, K)).  Either way the information matrix is
    updated with the MAP row of the chosen document, so both variants
    maintain the same state given the same selections.  Ties break to the
    lowest document index.
    """
    n = scores.n_docs
    if t_max < state.size:
        raise ValueError(f"t_max={t_max} is below the current design size {state.size}")
    if variant not in ("map", "marginal"):
        raise ValueError(f"unknown variant {variant!r}")
    if variant == "marginal":
        if samples is None:
            raise ValueError("marginal variant requires per-document samples")
        if samples.shape[0] != n or samples.shape[2] != scores.n_factors:
            raise ValueError("samples shape does not match scores")
        moments = second_moments(samples).reshape(n, -1)
    mask = state.mask(n)
    matrix = scores.matrix
    gains = np.empty(n)
    steps: list[RankStep] = []
    t_max = min(t_max, n)
    while state.size < t_max:
        if variant == "map":
            _kernels.quad_form_gains(matrix, np.ascontiguousarray(state.info_inv), gains)
        else:
            gains[:] = moments @ state.info_inv.ravel()
        gains[mask] = -np.inf
        pick = int(np.argmax(gains))
        score = float(gains[pick])
        if not np.isfinite(score):
            raise RuntimeError(f"non-finite design gain for document {pick}")
        state.add(pick, matrix[pick])
        steps.append(RankStep(index=pick, gain=score, log_det=state.log_det))
    return steps


def pca_scores(corpus: Corpus, K: int) -> FactorScores:
    """First K principal-component scores of centered row frequencies.

    Signs are fixed by making each component's largest-magnitude loading
    positive.
    """
    n, p = corpus.shape
    if n <= K:
        raise ValueError(f"need more than K={K} documents, have {n}")
    F = corpus.frequencies().toarray().astype(np.float64)
    F -= F.mean(axis=0, keepdims=True)
    U, s, Vt = np.linalg.svd(F, full_matrices=False)
    tol = s[0] * max(n, p) * np.finfo(np.float64).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    if rank < K:
        raise ValueError(f"centered frequency matrix has rank {rank}, below K={K}")
    scores = U[:, :K] * s[:K]
    for k in range(K):
        j = int(np.argmax(np.abs(Vt[k])))
        if Vt[k, j] < 0:
            scores[:, k] = -scores[:, k]
    return FactorScores(scores, "pca")
