"""Command-line pipeline: corpus building through serving the labeling queue."""

from __future__ import annotations

import csv
import sys

import click
import numpy as np

from .corpus import Corpus, TokenizerConfig, build_corpus, read_jsonl
from .design import greedy_rank, pca_scores, seed_design, topic_scores
from .forward import ForwardModel, classify, fit_forward, predict_probs
from .harness import (
    ExperimentPlan,
    learning_metrics,
    run_design_experiment,
    write_learning_points,
)
from .mnir import (
    MnirModel,
    PenaltyConfig,
    SentimentScale,
    SRScores,
    collapse_counts,
    fit_mnir,
    sr_scores,
)
from .topics import TopicModel, TopicPrior, fit_topics, sample_weights_all, select_k


@click.group()
def main():
    """Design-driven sentiment annotation pipeline."""


@main.command("build-corpus")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--min-count", default=1, show_default=True,
              help="Minimum document frequency for vocabulary tokens.")
@click.option("--stopwords", "stopwords_path", type=click.Path(exists=True))
@click.option("--no-texts", is_flag=True, help="Do not store raw texts.")
@click.option("--out", "out_path", required=True, type=click.Path())
def build_corpus_cmd(input_path, min_count, stopwords_path, no_texts, out_path):
    """Tokenize a JSONL document file into a sparse count container."""
    stopwords = frozenset()
    if stopwords_path:
        with open(stopwords_path, "r", encoding="utf-8") as fh:
            stopwords = frozenset(w.strip() for w in fh if w.strip())
    config = TokenizerConfig(min_doc_count=min_count, stopwords=stopwords)
    docs = read_jsonl(input_path)
    corpus = build_corpus(docs, config, keep_texts=not no_texts)
    corpus.save(out_path)
    click.echo(
        f"corpus: {corpus.n} docs x {corpus.p} tokens "
        f"({corpus.report.n_dropped} dropped) -> {out_path}"
    )


@main.command("fit-topics")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--k", type=int, help="Number of topics.")
@click.option("--k-grid", help="Comma-separated K values; best marginal wins.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--tol", default=1e-7, show_default=True, type=float)
@click.option("--max-iter", default=1000, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def fit_topics_cmd(corpus_path, k, k_grid, seed, tol, max_iter, out_path):
    """Fit the topic factorization (or select K over a grid)."""
    corpus = Corpus.load(corpus_path)
    if k_grid:
        grid = [int(v) for v in k_grid.split(",") if v.strip()]
        selection = select_k(corpus, grid, tol=tol, max_iter=max_iter, seed=seed)
        for kk in grid:
            res = selection.marginals[kk]
            click.echo(f"K={kk}: log marginal {res.value:.4f}"
                       + (" (flagged blocks)" if res.flagged_doc_blocks
                          or res.flagged_topic_blocks else ""))
        model = selection.best_model
        click.echo(f"selected K={selection.best_k}")
    elif k:
        model = fit_topics(corpus, k, tol=tol, max_iter=max_iter, seed=seed)
    else:
        raise click.UsageError("provide --k or --k-grid")
    model.save(out_path)
    report = model.fit_report
    click.echo(
        f"K={model.K}: log posterior {model.log_posterior:.4f} after "
        f"{report.iterations} iterations "
        f"({'converged' if report.converged else 'max_iter reached'}) -> {out_path}"
    )


@main.command("rank")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--t-max", required=True, type=int, help="Total design size.")
@click.option("--variant", default="map", show_default=True,
              type=click.Choice(["map", "marginal", "pca", "random"]))
@click.option("--corpus", "corpus_path", type=click.Path(exists=True),
              help="Required for the pca variant.")
@click.option("--samples-b", default=50, show_default=True, type=int,
              help="Posterior draws per document (marginal variant).")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def rank_cmd(model_path, t_max, variant, corpus_path, samples_b, seed, out_path):
    """Rank pool documents for annotation under a design strategy."""
    model = TopicModel.load(model_path)
    rows: list[tuple[int, str, str, str]] = []
    if variant == "random":
        rng = np.random.default_rng(seed)
        order = rng.permutation(model.n_docs)[:t_max]
        rows = [(r, model.doc_ids[i], "", "") for r, i in enumerate(order, start=1)]
    else:
        if variant == "pca":
            if not corpus_path:
                raise click.UsageError("--corpus is required for the pca variant")
            scores = pca_scores(Corpus.load(corpus_path), model.K)
        else:
            scores = topic_scores(model)
        state = seed_design(scores, model.K, seed=seed)
        seed_selected = list(state.selected)
        seed_log_det = state.log_det
        samples = None
        if variant == "marginal":
            samples = sample_weights_all(model, samples_b, seed=seed)
        steps = greedy_rank(scores, state, t_max,
                            variant="marginal" if variant == "marginal" else "map",
                            samples=samples)
        rank = 0
        for rank, i in enumerate(seed_selected, start=1):
            rows.append((rank, model.doc_ids[i], "", f"{seed_log_det:.10g}"))
        for step in steps:
            rank += 1
            rows.append((rank, model.doc_ids[step.index],
                         f"{step.gain:.10g}", f"{step.log_det:.10g}"))
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "doc_id", "gain", "cumulative_log_det"])
        writer.writerows(rows)
    click.echo(f"{len(rows)} ranked documents -> {out_path}")


def _parse_penalty(spec: str | None) -> PenaltyConfig | None:
    if not spec:
        return None
    kwargs = {}
    for part in spec.split(","):
        key, _, value = part.partition("=")
        key = key.strip()
        if key == "lambda":
            kwargs["lam"] = float(value)
        elif key == "tau":
            kwargs["tau"] = float(value)
        elif key == "mode":
            kwargs["mode"] = value.strip()
        else:
            raise click.UsageError(f"unknown penalty field {key!r}")
    return PenaltyConfig(**kwargs)


@main.command("fit-mnir")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--interactions", is_flag=True, help="Include subject blocks.")
@click.option("--penalty", "penalty_spec", help="lambda=..,tau=..[,mode=l1]")
@click.option("--out", "out_path", required=True, type=click.Path())
def fit_mnir_cmd(corpus_path, interactions, penalty_spec, out_path):
    """Fit the inverse regression on a labeled corpus."""
    corpus = Corpus.load(corpus_path)
    cells = collapse_counts(corpus, with_subjects=interactions)
    model = fit_mnir(cells, penalty=_parse_penalty(penalty_spec),
                     interactions=interactions)
    model.save(out_path)
    report = model.fit_report
    click.echo(
        f"{cells.n_cells} cells, nonzero loadings {model.nonzero_counts()} "
        f"after {report.sweeps} sweeps "
        f"({'converged' if report.converged else 'max sweeps reached'}) -> {out_path}"
    )


@main.command("sr-scores")
@click.option("--mnir", "mnir_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def sr_scores_cmd(mnir_path, corpus_path, out_path):
    """Project a pool corpus onto the fitted loading directions."""
    model = MnirModel.load(mnir_path)
    corpus = Corpus.load(corpus_path)
    scores = sr_scores(model, corpus)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["doc_id", "subject", "z0", "zs"])
        for i, doc_id in enumerate(scores.doc_ids):
            writer.writerow([doc_id, scores.subjects[i] or "",
                             f"{scores.z0[i]:.10g}", f"{scores.zs[i]:.10g}"])
    click.echo(f"{len(scores)} score rows -> {out_path}")


def _read_scores_csv(path) -> SRScores:
    doc_ids, subjects, z0, zs = [], [], [], []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            doc_ids.append(rec["doc_id"])
            subjects.append(rec["subject"] or None)
            z0.append(float(rec["z0"]))
            zs.append(float(rec["zs"]))
    return SRScores(doc_ids=doc_ids, subjects=subjects,
                    z0=np.array(z0), zs=np.array(zs))


def _read_labels_csv(path) -> dict[str, float]:
    labels = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            if rec["label"] != "":
                labels[rec["doc_id"]] = float(rec["label"])
    return labels


@main.command("fit-forward")
@click.option("--scores", "scores_path", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def fit_forward_cmd(scores_path, labels_path, out_path):
    """Fit the proportional-odds model from score and label files."""
    scores = _read_scores_csv(scores_path)
    label_map = _read_labels_csv(labels_path)
    labels = [label_map.get(d) for d in scores.doc_ids]
    model = fit_forward(scores, labels)
    model.save(out_path)
    report = model.fit_report
    click.echo(
        f"levels {model.levels}, cutpoints "
        + ", ".join(f"{g:.4f}" for g in model.cutpoints)
        + f", beta0 {model.beta0:.4f} "
        f"({'converged' if report.converged else 'not converged'}) -> {out_path}"
    )


@main.command("predict")
@click.option("--fwd", "fwd_path", required=True, type=click.Path(exists=True))
@click.option("--scores", "scores_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def predict_cmd(fwd_path, scores_path, out_path):
    """Per-document level probabilities, hard class and entropy."""
    model = ForwardModel.load(fwd_path)
    scores = _read_scores_csv(scores_path)
    probs = predict_probs(model, scores)
    result = classify(model, scores)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["doc_id"] + [f"p_{level:g}" for level in model.levels]
                        + ["class", "entropy"])
        for i, doc_id in enumerate(scores.doc_ids):
            writer.writerow(
                [doc_id] + [f"{v:.10g}" for v in probs[i]]
                + [f"{result.labels[i]:g}", f"{result.entropy[i]:.10g}"]
            )
    click.echo(f"{len(scores)} predictions -> {out_path}")


@main.command("experiment")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--strategies", default="map,random", show_default=True)
@click.option("--sizes", required=True, help="Comma-separated design sizes.")
@click.option("--reps", default=10, show_default=True, type=int)
@click.option("--metric", default="misclassification", show_default=True,
              type=click.Choice(["misclassification", "mae"]))
@click.option("--k", default=5, show_default=True, type=int)
@click.option("--samples-b", default=50, show_default=True, type=int)
@click.option("--strata", help="Comma-separated subjects for stratified mode.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def experiment_cmd(corpus_path, strategies, sizes, reps, metric, k, samples_b,
                   strata, seed, out_path):
    """Repeated-design learning-curve comparison on a labeled pool."""
    corpus = Corpus.load(corpus_path)
    plan = ExperimentPlan(
        strategies=tuple(s.strip() for s in strategies.split(",") if s.strip()),
        sizes=tuple(int(v) for v in sizes.split(",") if v.strip()),
        repetitions=reps,
        seed=seed,
        metric=metric,
        k=k,
        samples_b=samples_b,
        strata=tuple(s.strip() for s in strata.split(",")) if strata else None,
    )
    curve = run_design_experiment(corpus, plan)
    curve.to_csv(out_path)
    for strategy in plan.strategies:
        means = ", ".join(
            f"{size}: {curve.mean(strategy, size, stratum=None):.4f}"
            if not plan.strata else f"{size}: -"
            for size in plan.sizes
        )
        click.echo(f"{strategy:>9} mean {plan.metric}: {means}")
    click.echo(f"curves -> {out_path}")


def _read_ranking_csv(path) -> list[str]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return [rec["doc_id"] for rec in csv.DictReader(fh)]


@main.command("learning")
@click.option("--pool", "pool_path", required=True, type=click.Path(exists=True))
@click.option("--ranking", "ranking_path", required=True, type=click.Path(exists=True))
@click.option("--labels", "labels_path", required=True, type=click.Path(exists=True))
@click.option("--subject", required=True)
@click.option("--sizes", help="Comma-separated prefix sizes (default: 5 quantiles).")
@click.option("--out", "out_path", required=True, type=click.Path())
def learning_cmd(pool_path, ranking_path, labels_path, subject, sizes, out_path):
    """Sequential sparsity/entropy metrics along a design order."""
    corpus = Corpus.load(pool_path)
    ranking = _read_ranking_csv(ranking_path)
    label_map = _read_labels_csv(labels_path)
    corpus = corpus.with_labels([label_map.get(d) for d in corpus.doc_ids])
    row_of = {d: i for i, d in enumerate(corpus.doc_ids)}
    order = [row_of[d] for d in ranking if d in row_of]
    if sizes:
        grid = [int(v) for v in sizes.split(",") if v.strip()]
    else:
        grid = sorted({max(1, round(len(order) * q / 5)) for q in range(1, 6)})
    points = learning_metrics(corpus, order, grid, subject)
    write_learning_points(points, out_path)
    click.echo(f"{len(points)} learning points -> {out_path}")


@main.command("serve")
@click.option("--ranking", "ranking_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--store", "store_dir", required=True, type=click.Path())
@click.option("--policy", default="discard", show_default=True,
              type=click.Choice(["discard", "third_vote"]))
@click.option("--ui-dir", type=click.Path(exists=True),
              help="Built static bundle to serve at the web root.")
def serve_cmd(ranking_path, corpus_path, port, host, store_dir, policy, ui_dir):
    """Serve the annotation queue over HTTP."""
    import uvicorn

    from .service import AnnotationStore, StoreConfig, create_app

    corpus = Corpus.load(corpus_path)
    ranking = _read_ranking_csv(ranking_path)
    store = AnnotationStore(
        corpus, ranking, store_dir, config=StoreConfig(policy=policy)
    )
    app = create_app(store, ui_dir=ui_dir)
    click.echo(f"serving {len(ranking)} ranked documents on {host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    sys.exit(main())
