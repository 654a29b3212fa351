"""Document ingestion: tokenization, vocabulary and the sparse count matrix.

The pipeline is deliberately plain: whitespace tokenization with optional
lowercasing and punctuation stripping, a stopword list, an optional stemmer
hook, and a minimum document-count threshold on the vocabulary.  Anything
fancier (stemmers, n-grams) is injected from outside or out of scope.
"""

from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .storage import read_npz, write_npz

CORPUS_FORMAT_VERSION = 1

# '#' and '@' are kept: hashtags and mentions carry signal in social text.
_PUNCT_TABLE = str.maketrans("", "", "".join(c for c in string.punctuation if c not in "#@"))


@dataclass(frozen=True)
class RawDocument:
    """One input record: free text plus optional stratum tag and sentiment."""

    id: str
    text: str
    subject: Optional[str] = None
    label: Optional[float] = None


@dataclass(frozen=True)
class TokenizerConfig:
    lowercase: bool = True
    strip_punctuation: bool = True
    stopwords: frozenset = frozenset()
    min_doc_count: int = 1
    stemmer: Optional[Callable[[str], str]] = None
    # tokens exempt from the min_doc_count filter (e.g. a shared vocabulary
    # from another corpus); matched after lowercasing/stemming
    keep: frozenset = frozenset()

    def __post_init__(self):
        if self.min_doc_count < 1:
            raise ValueError("min_doc_count must be >= 1")


def tokenize(text: str, config: TokenizerConfig) -> list[str]:
    """Split ``text`` into tokens under the config's rules.

    Order of operations: lowercase, strip punctuation, split on whitespace,
    drop stopwords, apply the stemmer hook.  Empty input gives an empty list.
    """
    if config.lowercase:
        text = text.lower()
    if config.strip_punctuation:
        text = text.translate(_PUNCT_TABLE)
    tokens = [t for t in text.split() if t and t not in config.stopwords]
    if config.stemmer is not None:
        tokens = [config.stemmer(t) for t in tokens]
    return tokens


class Vocabulary:
    """Bijection between tokens and column ids, in lexicographic order."""

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self.index = {tok: j for j, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self):
        return f"Vocabulary({len(self)} tokens)"

    def union(self, other: "Vocabulary") -> "Vocabulary":
        return Vocabulary(sorted(set(self.tokens) | set(other.tokens)))


def build_vocabulary(
    docs: Sequence[Sequence[str]], min_doc_count: int = 1, keep: Iterable[str] = ()
) -> Vocabulary:
    """Vocabulary of tokens appearing in at least ``min_doc_count`` documents.

    ``keep`` tokens bypass the threshold but still must occur at least once.
    Raises ValueError on an empty document list or when no token survives.
    """
    if len(docs) == 0:
        raise ValueError("empty corpus")
    doc_freq = Counter()
    for tokens in docs:
        doc_freq.update(set(tokens))
    keep = set(keep)
    selected = sorted(t for t, c in doc_freq.items() if c >= min_doc_count or t in keep)
    if not selected:
        raise ValueError("vocabulary empty under threshold")
    return Vocabulary(selected)


@dataclass
class BuildReport:
    dropped_ids: list = field(default_factory=list)

    @property
    def n_dropped(self):
        return len(self.dropped_ids)


class Corpus:
    """Immutable document-term count matrix with per-row metadata.

    ``counts`` is CSR with strictly positive stored entries; ``totals`` is the
    per-row token count (every retained row has at least one token).
    ``subjects``/``labels`` are per-row lists with None for missing values;
    ``texts`` optionally retains the raw text for serving.
    """

    def __init__(self, vocab, counts, doc_ids, subjects=None, labels=None,
                 texts=None, report=None):
        counts = sp.csr_matrix(counts, dtype=np.int64)
        counts.eliminate_zeros()
        if counts.shape[1] != len(vocab):
            raise ValueError("count matrix width does not match vocabulary size")
        if counts.nnz and counts.data.min() <= 0:
            raise ValueError("stored counts must be positive")
        totals = np.asarray(counts.sum(axis=1)).ravel()
        if counts.shape[0] and totals.min() < 1:
            raise ValueError("every retained row needs at least one token")
        self.vocab = vocab
        self.counts = counts
        self.totals = totals
        self.doc_ids = list(doc_ids)
        n = counts.shape[0]
        if len(self.doc_ids) != n:
            raise ValueError("doc_ids length does not match row count")
        self.subjects = list(subjects) if subjects is not None else [None] * n
        self.labels = list(labels) if labels is not None else [None] * n
        self.texts = list(texts) if texts is not None else None
        for name, values in (("subjects", self.subjects), ("labels", self.labels)):
            if len(values) != n:
                raise ValueError(f"{name} length does not match row count")
        if self.texts is not None and len(self.texts) != n:
            raise ValueError("texts length does not match row count")
        self.report = report or BuildReport()

    @property
    def n(self):
        return self.counts.shape[0]

    @property
    def p(self):
        return self.counts.shape[1]

    @property
    def shape(self):
        return self.counts.shape

    @property
    def vocabulary(self):
        return self.vocab

    def __repr__(self):
        return f"Corpus(n={self.n}, p={self.p}, nnz={self.counts.nnz})"

    def frequencies(self) -> sp.csr_matrix:
        """Row-normalized counts f_i = x_i / m_i (sparse)."""
        inv = sp.diags(1.0 / self.totals)
        return sp.csr_matrix(inv @ self.counts)

    def subset(self, rows) -> "Corpus":
        rows = np.asarray(rows, dtype=np.int64)
        return Corpus(
            self.vocab,
            self.counts[rows],
            [self.doc_ids[i] for i in rows],
            [self.subjects[i] for i in rows],
            [self.labels[i] for i in rows],
            [self.texts[i] for i in rows] if self.texts is not None else None,
        )

    def with_labels(self, labels) -> "Corpus":
        """Same corpus with the label column replaced."""
        return Corpus(
            self.vocab, self.counts, self.doc_ids, self.subjects,
            list(labels), self.texts,
        )

    def save(self, path):
        coo = self.counts.tocoo()
        arrays = {
            "rows": coo.row.astype(np.int64),
            "cols": coo.col.astype(np.int64),
            "vals": coo.data.astype(np.int64),
            "vocab": np.array(self.vocab.tokens, dtype=np.str_),
            "doc_ids": np.array(self.doc_ids, dtype=np.str_),
            "subjects": np.array([s or "" for s in self.subjects], dtype=np.str_),
            "subjects_mask": np.array([s is not None for s in self.subjects]),
            "labels": np.array(
                [l if l is not None else 0.0 for l in self.labels], dtype=np.float64
            ),
            "labels_mask": np.array([l is not None for l in self.labels]),
        }
        if self.texts is not None:
            arrays["texts"] = np.array(self.texts, dtype=np.str_)
        meta = {"n": self.n, "p": self.p, "dropped_ids": self.report.dropped_ids}
        write_npz(path, "corpus", CORPUS_FORMAT_VERSION, arrays, meta)

    @classmethod
    def load(cls, path) -> "Corpus":
        arrays, meta, _ = read_npz(path, "corpus", CORPUS_FORMAT_VERSION)
        n, p = meta["n"], meta["p"]
        counts = sp.coo_matrix(
            (arrays["vals"], (arrays["rows"], arrays["cols"])), shape=(n, p)
        ).tocsr()
        subjects = [
            str(s) if m else None
            for s, m in zip(arrays["subjects"], arrays["subjects_mask"])
        ]
        labels = [
            float(l) if m else None
            for l, m in zip(arrays["labels"], arrays["labels_mask"])
        ]
        texts = [str(t) for t in arrays["texts"]] if "texts" in arrays else None
        vocab = Vocabulary([str(t) for t in arrays["vocab"]])
        return cls(
            vocab,
            counts,
            [str(d) for d in arrays["doc_ids"]],
            subjects,
            labels,
            texts,
            BuildReport(list(meta.get("dropped_ids", []))),
        )


def build_corpus(
    docs: Sequence[RawDocument],
    config: TokenizerConfig,
    vocab: Optional[Vocabulary] = None,
    keep_texts: bool = True,
) -> Corpus:
    """Tokenize ``docs`` and assemble the count matrix.

    When ``vocab`` is None it is built from these documents under the config's
    ``min_doc_count``; a supplied vocabulary is used as-is (shared-vocabulary
    workflows).  Rows with no in-vocabulary tokens are dropped and listed in
    the returned corpus's ``report``.
    """
    seen = set()
    for doc in docs:
        if not doc.id:
            raise ValueError("document id must be nonempty")
        if doc.id in seen:
            raise ValueError(f"duplicate document id {doc.id!r}")
        seen.add(doc.id)

    tokenized = [tokenize(doc.text, config) for doc in docs]
    if vocab is None:
        vocab = build_vocabulary(tokenized, config.min_doc_count, keep=config.keep)

    indptr = [0]
    indices: list[int] = []
    data: list[int] = []
    kept_rows = []
    report = BuildReport()
    for i, tokens in enumerate(tokenized):
        row = Counter(vocab.index[t] for t in tokens if t in vocab.index)
        if not row:
            report.dropped_ids.append(docs[i].id)
            continue
        for j in sorted(row):
            indices.append(j)
            data.append(row[j])
        indptr.append(len(indices))
        kept_rows.append(i)
    if not kept_rows:
        raise ValueError("all documents dropped: no in-vocabulary tokens")

    counts = sp.csr_matrix(
        (np.array(data, dtype=np.int64), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(kept_rows), len(vocab)),
    )
    return Corpus(
        vocab,
        counts,
        [docs[i].id for i in kept_rows],
        [docs[i].subject for i in kept_rows],
        [docs[i].label for i in kept_rows],
        [docs[i].text for i in kept_rows] if keep_texts else None,
        report,
    )


def read_jsonl(path) -> list[RawDocument]:
    """Read line-delimited JSON records {id, text, subject?, label?}."""
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: invalid JSON record") from exc
            label = rec.get("label")
            docs.append(
                RawDocument(
                    id=str(rec["id"]),
                    text=str(rec.get("text", "")),
                    subject=rec.get("subject"),
                    label=float(label) if label is not None else None,
                )
            )
    return docs
