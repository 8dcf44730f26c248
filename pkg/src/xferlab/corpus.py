"""Tokenization, vocabularies, domain corpora and dataset-level similarity."""
from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

UNK = "<unk>"
UNK_ID = 0
N_MAX = 64
TRAIN_FRACTION = 0.8

_PUNCT = str.maketrans("", "", string.punctuation)


class CorpusError(ValueError):
    pass


def tokenize(text: str, n_max: int = N_MAX) -> list[str]:
    return text.lower().translate(_PUNCT).split()[:n_max]


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) < 2:
            raise CorpusError("vocabulary needs at least one token besides UNK")
        if self.tokens[UNK_ID] != UNK:
            raise CorpusError(f"token 0 must be {UNK!r}")
        if len(set(self.tokens)) != len(self.tokens):
            raise CorpusError("duplicate tokens in vocabulary")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def build(cls, token_lists: Iterable[Iterable[str]]) -> "Vocabulary":
        seen = set()
        for toks in token_lists:
            seen.update(toks)
        seen.discard(UNK)
        return cls((UNK, *sorted(seen)))

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def encode(self, toks: Sequence[str]) -> tuple[int, ...]:
        ids = tuple(self.id(t) for t in toks)
        return ids if ids else (UNK_ID,)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path):
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(l for l in lines if l))


def split_indices(m: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic 80/20 partition of range(m); depends only on (m, seed)."""
    perm = np.random.default_rng(seed).permutation(m)
    n_train = max(1, int(np.floor(TRAIN_FRACTION * m))) if m else 0
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


@dataclass
class DomainDataset:
    name: str
    vocab: Vocabulary
    sequences: list[tuple[int, ...]]
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    split_seed: int = 0
    surface: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.sequences) == 0:
            raise CorpusError(f"domain {self.name!r} is empty")
        if len(self.labels) != len(self.sequences):
            raise CorpusError("labels and sequences differ in length")
        if not set(np.unique(self.labels)) <= {0, 1}:
            raise CorpusError("labels must be 0 or 1")
        if not self.surface:
            used = {i for s in self.sequences for i in s}
            self.surface = frozenset(self.vocab.tokens[i] for i in used)

    def __len__(self):
        return len(self.sequences)

    @classmethod
    def from_sequences(cls, name, vocab, sequences, labels, split_seed=0, surface=None):
        train, test = split_indices(len(sequences), split_seed)
        return cls(name, vocab, [tuple(s) for s in sequences], np.asarray(labels), train, test,
                   split_seed, frozenset(surface or ()))

    def subset(self, which: str) -> tuple[list[tuple[int, ...]], np.ndarray]:
        idx = {"train": self.train_idx, "test": self.test_idx}.get(which)
        if idx is None:
            idx = np.arange(len(self))
        return [self.sequences[i] for i in idx], self.labels[idx]

    def replace_sequences(self, sequences, name=None) -> "DomainDataset":
        """Same labels and split, new token sequences."""
        if len(sequences) != len(self.sequences):
            raise CorpusError("replacement must keep the dataset cardinality")
        return DomainDataset(name or self.name, self.vocab, [tuple(s) for s in sequences],
                             self.labels.copy(), self.train_idx.copy(), self.test_idx.copy(),
                             self.split_seed)

    def texts(self) -> list[str]:
        return [" ".join(self.vocab.decode(s)) for s in self.sequences]


def read_corpus(path) -> tuple[list[int], list[list[str]]]:
    path = Path(path)
    labels, toks = [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise CorpusError(f"{path}:{lineno}: expected '<label>\\t<text>', got {len(fields)} fields")
            if fields[0] not in ("0", "1"):
                raise CorpusError(f"{path}:{lineno}: label must be 0 or 1, got {fields[0]!r}")
            labels.append(int(fields[0]))
            toks.append(tokenize(fields[1]))
    if not labels:
        raise CorpusError(f"{path}: empty corpus")
    return labels, toks


def load_domain(path, vocab: Vocabulary | None = None, seed: int = 0, name: str | None = None) -> DomainDataset:
    """Read a ``<label>\\t<text>`` corpus; builds a vocabulary when ``vocab`` is None."""
    labels, toks = read_corpus(path)
    if vocab is None:
        vocab = Vocabulary.build(toks)
    surface = frozenset(t for ts in toks for t in ts)
    seqs = [vocab.encode(ts) for ts in toks]
    return DomainDataset.from_sequences(name or Path(path).stem, vocab, seqs, labels, seed, surface)


def write_corpus(path, labels: Sequence[int], texts: Sequence[str]):
    lines = [f"{int(y)}\t{t}\n" for y, t in zip(labels, texts)]
    Path(path).write_text("".join(lines), encoding="utf-8")


def shared_vocab(a: DomainDataset, b: DomainDataset) -> float:
    ua, ub = a.surface, b.surface
    union = ua | ub
    if not union:
        return 1.0
    return len(ua & ub) / len(union)


def pooling_matrix(sequences: Sequence[Sequence[int]], k: int) -> np.ndarray:
    """Row m holds token frequencies of sequence m divided by its length."""
    P = np.zeros((len(sequences), k))
    for m, s in enumerate(sequences):
        np.add.at(P[m], np.asarray(s, dtype=int), 1.0 / len(s))
    return P


def dataset_distance(a: DomainDataset, b: DomainDataset, embeddings: np.ndarray,
                     seed: int = 0, pairing: str = "random") -> float:
    """Mean squared L2 distance between mean-pooled embeddings of paired sequences.

    ``pairing="identity"`` pairs example i with example i (equal sizes only);
    ``"random"`` resamples both sides with replacement to the larger size.
    """
    if len(a) == 0 or len(b) == 0:
        raise CorpusError("dataset_distance needs non-empty datasets")
    k = embeddings.shape[0]
    pa = pooling_matrix(a.sequences, k) @ embeddings
    pb = pooling_matrix(b.sequences, k) @ embeddings
    if pairing == "identity":
        if len(a) != len(b):
            raise CorpusError("identity pairing needs equal dataset sizes")
        ia = ib = np.arange(len(a))
    else:
        rng = np.random.default_rng(seed)
        n = max(len(a), len(b))
        ia = rng.integers(len(a), size=n)
        ib = rng.integers(len(b), size=n)
    diff = pa[ia] - pb[ib]
    return float(np.mean(np.sum(diff * diff, axis=1)))
