"""Shared builders for synthetic corpora and collapsed-count instances."""

from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.special import expit

from annodesign.corpus import Corpus, RawDocument, TokenizerConfig, Vocabulary, build_corpus
from annodesign.mnir import CollapsedCounts, SentimentScale


def make_corpus(X, subjects=None, labels=None, texts=None) -> Corpus:
    """Corpus from a dense count array with generated ids and vocab."""
    X = np.asarray(X)
    n, p = X.shape
    vocab = Vocabulary([f"t{j:03d}" for j in range(p)])
    return Corpus(
        vocab,
        sp.csr_matrix(X),
        [f"d{i:04d}" for i in range(n)],
        subjects=subjects,
        labels=labels,
        texts=texts,
    )


def two_topic_counts(seed: int, n: int = 500, m: int = 200, p: int = 30):
    """Disjoint-support two-topic multinomial draws and their truth."""
    rng = np.random.default_rng(seed)
    theta = np.zeros((2, p))
    half = p // 2
    theta[0, :half] = rng.dirichlet(np.ones(half))
    theta[1, half:] = rng.dirichlet(np.ones(p - half))
    omega = rng.dirichlet([1.0, 1.0], size=n)
    X = np.vstack([rng.multinomial(m, omega[i] @ theta) for i in range(n)])
    keep = X.sum(axis=1) > 0
    return X[keep], theta, omega[keep]


def sentiment_corpus(seed, n=120, p=25, K=3, m=60, slope=4.0,
                     cutpoints=(-1.0, 1.0), subjects=None):
    """Topic-model counts whose sentiment is linear in the topic weights."""
    rng = np.random.default_rng(seed)
    theta = rng.dirichlet(np.ones(p) * 0.3, size=K)
    omega = rng.dirichlet(np.ones(K) * 0.6, size=n)
    X = np.vstack([rng.multinomial(m, omega[i] @ theta) for i in range(n)])
    direction = np.linspace(-1.0, 1.0, K)
    u = slope * (omega @ direction)
    cum = expit(np.asarray(cutpoints)[None, :] - u[:, None])
    probs = np.column_stack([cum[:, 0], cum[:, 1] - cum[:, 0], 1.0 - cum[:, 1]])
    levels = np.array([-1.0, 0.0, 1.0])
    labels = [float(levels[rng.choice(3, p=pr / pr.sum())]) for pr in probs]
    return make_corpus(X, labels=labels, subjects=subjects)


def simulate_cells(
    seed: int,
    p: int = 20,
    n_nonzero: int = 5,
    m_y: int = 10_000,
    levels=(-1.0, 0.0, 1.0),
    magnitude: float = 1.0,
):
    """Collapsed counts drawn from the inverse-regression model itself.

    Returns (cells, alpha, phi) with phi sparse at the given magnitude.
    """
    rng = np.random.default_rng(seed)
    alpha = rng.normal(0.0, 0.5, size=p)
    phi = np.zeros(p)
    support = rng.choice(p, size=n_nonzero, replace=False)
    phi[support] = rng.choice([-1.0, 1.0], size=n_nonzero) * (
        magnitude + rng.uniform(0.0, 0.5, size=n_nonzero)
    )
    x = np.zeros((len(levels), p))
    for c, y in enumerate(levels):
        eta = alpha + y * phi
        q = np.exp(eta - eta.max())
        q /= q.sum()
        x[c] = rng.multinomial(m_y, q)
    cells = CollapsedCounts(
        x=np.ascontiguousarray(x),
        m=x.sum(axis=1),
        y=np.array([float(v) for v in levels]),
        subj=np.zeros(len(levels), dtype=np.int64),
        subject_names=[],
        scale=SentimentScale(tuple(levels)),
        n_excluded=0,
        vocab=[f"t{j:03d}" for j in range(p)],
    )
    return cells, alpha, phi


@pytest.fixture
def tiny_docs():
    return [
        RawDocument("a1", "good great good", subject="alpha", label=1.0),
        RawDocument("a2", "bad awful bad", subject="alpha", label=-1.0),
        RawDocument("b1", "good fine", subject="beta", label=1.0),
        RawDocument("b2", "bad fine", subject="beta", label=-1.0),
        RawDocument("g1", "fine fine good", label=0.0),
    ]


@pytest.fixture
def tiny_corpus(tiny_docs):
    return build_corpus(tiny_docs, TokenizerConfig())
