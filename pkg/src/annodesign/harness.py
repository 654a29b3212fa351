"""Experiment protocols: repeated-design learning curves and sequential metrics.

``run_design_experiment`` compares ranking strategies on a fully labeled
pool: each repetition seeds a design (the same seed documents for every
factor-driven strategy), extends it to each grid size, refits the inverse
and forward models from scratch on the selected subset, and scores the
whole pool.  ``learning_metrics`` walks one incremental design order and
tracks subject-loading sparsity and predictive entropy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus
from .design import greedy_rank, pca_scores, seed_design, topic_scores
from .forward import ForwardModel, classify, fit_forward
from .mnir import (
    MnirModel,
    PenaltyConfig,
    SentimentScale,
    SRScores,
    collapse_counts,
    fit_mnir,
    sr_scores,
)
from .topics import TopicModel, fit_topics, sample_weights_all

_STRATEGIES = ("map", "marginal", "pca", "random")
_METRICS = ("misclassification", "mae")


@dataclass(frozen=True)
class ExperimentPlan:
    """Grid of strategies, design sizes and repetitions for one experiment."""

    strategies: tuple[str, ...]
    sizes: tuple[int, ...]
    repetitions: int
    seed: int = 0
    metric: str = "misclassification"
    k: int = 5
    samples_b: int = 50
    strata: tuple[str, ...] | None = None

    def __post_init__(self):
        strategies = tuple(self.strategies)
        sizes = tuple(int(s) for s in self.sizes)
        object.__setattr__(self, "strategies", strategies)
        object.__setattr__(self, "sizes", sizes)
        for s in strategies:
            if s not in _STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")
        if not strategies:
            raise ValueError("no strategies given")
        if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("sizes must be strictly increasing")
        if sizes[0] < self.k:
            raise ValueError(f"smallest size {sizes[0]} is below K={self.k}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.metric not in _METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")


@dataclass
class LearningCurve:
    """Tidy per-repetition error records with exact means."""

    records: list[tuple[str | None, str, int, int, float]] = field(default_factory=list)

    def add(self, stratum, strategy, size, rep, value):
        self.records.append((stratum, strategy, size, int(rep), float(value)))

    def values(self, strategy: str, size: int, stratum=None) -> np.ndarray:
        return np.array(
            [v for st, sg, sz, _, v in self.records
             if sg == strategy and sz == size and st == stratum]
        )

    def mean(self, strategy: str, size: int, stratum=None) -> float:
        return float(self.values(strategy, size, stratum).mean())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stratum", "strategy", "size", "rep", "value"])
            for stratum, strategy, size, rep, value in self.records:
                writer.writerow([stratum or "", strategy, size, rep, f"{value:.10g}"])


def _subset_scores(scores: SRScores, rows) -> SRScores:
    rows = list(rows)
    return SRScores(
        doc_ids=[scores.doc_ids[i] for i in rows],
        subjects=[scores.subjects[i] for i in rows],
        z0=scores.z0[rows],
        zs=scores.zs[rows],
    )


def fit_and_predict(
    corpus: Corpus,
    subset_rows,
    scale: SentimentScale,
    penalty: PenaltyConfig | None = None,
    interactions: bool | None = None,
) -> tuple[np.ndarray, np.ndarray, MnirModel | None, ForwardModel | None]:
    """Refit MNIR + forward on a labeled subset; score the whole pool.

    Returns (predicted levels, per-document entropy, mnir model, forward
    model).  A single-class subset yields that constant prediction with
    zero entropy and no models (degenerate but well-defined, so large
    experiment sweeps never abort on an unlucky draw).
    """
    subset = corpus.subset(subset_rows)
    labeled = [lab for lab in subset.labels if lab is not None]
    distinct = sorted(set(labeled))
    if len(distinct) < 2:
        if not distinct:
            raise ValueError("subset has no labeled documents")
        n = corpus.shape[0]
        return np.full(n, distinct[0]), np.zeros(n), None, None
    cells = collapse_counts(subset, scale, with_subjects=bool(interactions))
    model = fit_mnir(cells, penalty=penalty, interactions=interactions)
    pool_scores = sr_scores(model, corpus)
    train_rows = [i for i, lab in zip(subset_rows, subset.labels) if lab is not None]
    train_scores = _subset_scores(pool_scores, train_rows)
    train_labels = [corpus.labels[i] for i in train_rows]
    fwd = fit_forward(train_scores, train_labels, scale=scale)
    result = classify(fwd, pool_scores)
    return result.labels, result.entropy, model, fwd


def _metric_value(name: str, predicted: np.ndarray, truth: np.ndarray) -> float:
    if name == "misclassification":
        return float(np.mean(predicted != truth))
    return float(np.mean(np.abs(predicted - truth)))


def _strategy_orders(
    plan: ExperimentPlan,
    topic_model: TopicModel,
    pca,
    rep_seed: np.random.SeedSequence,
) -> dict[str, list[int]]:
    """Design order per strategy for one repetition.

    Factor-driven strategies share the same random seed documents; the
    random baseline is an independent pool permutation.
    """
    design_seed, perm_seed, sample_seed = rep_seed.spawn(3)
    t_max = plan.sizes[-1]
    orders: dict[str, list[int]] = {}
    scores = topic_scores(topic_model)
    for strategy in plan.strategies:
        if strategy == "random":
            rng = np.random.default_rng(perm_seed)
            orders[strategy] = [int(i) for i in rng.permutation(scores.n_docs)[:t_max]]
            continue
        if strategy == "pca":
            state = seed_design(pca, plan.k, seed=design_seed)
            greedy_rank(pca, state, t_max)
        elif strategy == "map":
            state = seed_design(scores, plan.k, seed=design_seed)
            greedy_rank(scores, state, t_max)
        else:
            samples = sample_weights_all(topic_model, plan.samples_b, seed=sample_seed)
            state = seed_design(scores, plan.k, seed=design_seed)
            greedy_rank(scores, state, t_max, variant="marginal", samples=samples)
        orders[strategy] = state.selected
    return orders


def run_design_experiment(
    corpus: Corpus,
    plan: ExperimentPlan,
    scale: SentimentScale | None = None,
    penalty: PenaltyConfig | None = None,
    topic_model: TopicModel | None = None,
) -> LearningCurve:
    """Repeated-design comparison of ranking strategies on a labeled pool.

    The topic factorization (and PCA basis) is fit once on the full pool;
    each repetition draws fresh seed documents and posterior samples.
    With ``plan.strata`` the full pipeline runs independently inside each
    subject subsample and the records carry the stratum name.
    """
    scale = scale or SentimentScale()
    if plan.strata:
        curve = LearningCurve()
        for subject in plan.strata:
            rows = [i for i, s in enumerate(corpus.subjects) if s == subject]
            if not rows:
                raise ValueError(f"no documents for stratum {subject!r}")
            sub = corpus.subset(rows)
            part = run_design_experiment(
                sub,
                ExperimentPlan(
                    strategies=plan.strategies,
                    sizes=plan.sizes,
                    repetitions=plan.repetitions,
                    seed=plan.seed,
                    metric=plan.metric,
                    k=plan.k,
                    samples_b=plan.samples_b,
                ),
                scale=scale,
                penalty=penalty,
            )
            for _, strategy, size, rep, value in part.records:
                curve.add(subject, strategy, size, rep, value)
        return curve

    n = corpus.shape[0]
    if any(lab is None for lab in corpus.labels):
        raise ValueError("experiment corpus must be fully labeled")
    if plan.sizes[-1] > n:
        raise ValueError(f"largest size {plan.sizes[-1]} exceeds pool size {n}")
    truth = np.array([float(lab) for lab in corpus.labels])

    root = np.random.SeedSequence(plan.seed)
    fit_seed, rep_root = root.spawn(2)
    if topic_model is None:
        topic_model = fit_topics(
            corpus, plan.k, seed=int(fit_seed.generate_state(1)[0])
        )
    pca = pca_scores(corpus, plan.k) if "pca" in plan.strategies else None

    curve = LearningCurve()
    rep_seeds = rep_root.spawn(plan.repetitions)
    for rep in range(plan.repetitions):
        orders = _strategy_orders(plan, topic_model, pca, rep_seeds[rep])
        for strategy, order in orders.items():
            for size in plan.sizes:
                predicted, _, _, _ = fit_and_predict(
                    corpus, order[:size], scale, penalty=penalty, interactions=False
                )
                curve.add(None, strategy, size, rep,
                          _metric_value(plan.metric, predicted, truth))
    return curve


@dataclass(frozen=True)
class LearningPoint:
    """Sequential-design checkpoint: sparsity and entropy after refit."""

    size: int
    n_labeled: int
    nonzero_subject_loadings: int
    mean_entropy: float
    skipped: bool = False


def learning_metrics(
    corpus: Corpus,
    order,
    sizes,
    subject: str,
    scale: SentimentScale | None = None,
    penalty: PenaltyConfig | None = None,
) -> list[LearningPoint]:
    """Refit along nested prefixes of a design order.

    For each prefix size: fit the interaction model on the prefix's
    labeled documents, count exactly-nonzero loadings in the subject's
    block, and average classification entropy over the whole pool.
    Prefixes without two distinct labels are emitted skipped.
    """
    scale = scale or SentimentScale()
    order = [int(i) for i in order]
    sizes = sorted(int(s) for s in sizes)
    if sizes and sizes[-1] > len(order):
        raise ValueError("prefix size exceeds the design order length")
    points: list[LearningPoint] = []
    for size in sizes:
        prefix = order[:size]
        labeled = [corpus.labels[i] for i in prefix if corpus.labels[i] is not None]
        if len(set(labeled)) < 2:
            points.append(LearningPoint(size, len(labeled), 0, float("nan"), True))
            continue
        _, entropy, mnir_model, _ = fit_and_predict(
            corpus, prefix, scale, penalty=penalty, interactions=True
        )
        row = mnir_model.row_for_subject(subject)
        nonzero = int(np.count_nonzero(mnir_model.phi[row])) if row > 0 else 0
        points.append(
            LearningPoint(size, len(labeled), nonzero, float(entropy.mean()))
        )
    return points


def write_learning_points(points: list[LearningPoint], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["size", "n_labeled", "nonzero_subject_loadings",
                         "mean_entropy", "skipped"])
        for pt in points:
            writer.writerow([pt.size, pt.n_labeled, pt.nonzero_subject_loadings,
                             f"{pt.mean_entropy:.10g}", int(pt.skipped)])
