"""Bag-of-embeddings classifiers, the weight-delta meta learner, and parameter I/O."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, TrainConfig, TrainLog, Var
from .corpus import DomainDataset, Vocabulary, pooling_matrix

N_CLASSES = 2
INIT_SCALE = 0.1


class ShapeError(ValueError):
    pass


def _layer_shapes(arch: str, hidden: int, k: int, d: int) -> list[tuple[str, tuple[int, ...]]]:
    if arch == "logreg":
        return [("E", (k, d)), ("W", (d, N_CLASSES)), ("b", (N_CLASSES,))]
    if arch == "mlp":
        if hidden < 1:
            raise ValueError("mlp needs at least one hidden unit")
        return [("E", (k, d)), ("W1", (d, hidden)), ("b1", (hidden,)),
                ("W2", (hidden, N_CLASSES)), ("b2", (N_CLASSES,))]
    raise ValueError(f"unknown architecture {arch!r}")


def _unflatten(theta, shapes):
    out, pos = {}, 0
    for name, shape in shapes:
        n = math.prod(shape)
        out[name] = theta[pos:pos + n].reshape(shape)
        pos += n
    return out


def _unflatten_var(th: Var, shapes) -> dict[str, Var]:
    out, pos = {}, 0
    for name, shape in shapes:
        n = math.prod(shape)
        out[name] = ad.reshape(th[pos:pos + n], shape)
        pos += n
    return out


@dataclass(frozen=True, eq=False)
class ClassifierParams:
    arch: str
    k: int
    d: int
    theta: np.ndarray
    hidden: int = 0
    seed: int = 0
    log: TrainLog | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 1 or theta.size != self.size_for(self.arch, self.k, self.d, self.hidden):
            raise ShapeError(f"theta has {theta.size} entries, {self.arch} k={self.k} d={self.d} "
                             f"needs {self.size_for(self.arch, self.k, self.d, self.hidden)}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta contains non-finite entries")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @staticmethod
    def size_for(arch, k, d, hidden=0) -> int:
        return sum(math.prod(s) for _, s in _layer_shapes(arch, hidden, k, d))

    @property
    def shapes(self):
        return _layer_shapes(self.arch, self.hidden, self.k, self.d)

    @property
    def arch_tag(self) -> str:
        return "logreg" if self.arch == "logreg" else f"mlp-{self.hidden}"

    def layers(self) -> dict[str, np.ndarray]:
        return _unflatten(self.theta, self.shapes)

    @property
    def embeddings(self) -> np.ndarray:
        return self.layers()["E"]

    def with_theta(self, theta) -> "ClassifierParams":
        return replace(self, theta=np.asarray(theta, dtype=float), log=None)

    def same_layout(self, other: "ClassifierParams") -> bool:
        return (self.arch, self.k, self.d, self.hidden) == (other.arch, other.k, other.d, other.hidden)


def parse_arch(spec: str) -> tuple[str, int]:
    """``"logreg"`` or ``"mlp-<h>"`` / ``"mlp"`` (8 hidden units)."""
    spec = spec.lower()
    if spec == "logreg":
        return "logreg", 0
    if spec.startswith("mlp"):
        rest = spec[3:].lstrip("-:(").rstrip(")")
        return "mlp", int(rest) if rest else 8
    raise ValueError(f"unknown architecture {spec!r}")


def init_classifier(arch: str, vocab: Vocabulary | int, d: int, seed: int = 0) -> ClassifierParams:
    if d < 2:
        raise ValueError("embedding width d must be >= 2")
    name, hidden = parse_arch(arch)
    k = vocab if isinstance(vocab, int) else len(vocab)
    n = ClassifierParams.size_for(name, k, d, hidden)
    theta = np.random.default_rng(seed).uniform(-INIT_SCALE, INIT_SCALE, size=n)
    return ClassifierParams(name, k, d, theta, hidden, seed)


def logits_on_tape(params: ClassifierParams, th: Var, pooled: Var) -> Var:
    L = _unflatten_var(th, params.shapes)
    if params.arch == "logreg":
        return pooled @ L["W"] + L["b"]
    h = ad.tanh(pooled @ L["W1"] + L["b1"])
    return h @ L["W2"] + L["b2"]


def pooled_on_tape(params: ClassifierParams, th: Var, P: np.ndarray) -> Var:
    E = _unflatten_var(th, params.shapes)["E"]
    return ad.matmul(th.tape.const(P), E)


def one_hot(labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, N_CLASSES))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _check_ids(params, sequences):
    for s in sequences:
        if len(s) == 0:
            raise ShapeError("empty token sequence")
        if max(s) >= params.k or min(s) < 0:
            raise ShapeError(f"token id out of range for vocabulary of size {params.k}")


def predict_proba(params: ClassifierParams, sequences: Sequence[Sequence[int]]) -> np.ndarray:
    _check_ids(params, sequences)
    P = pooling_matrix(sequences, params.k)
    L = params.layers()
    pooled = P @ L["E"]
    if params.arch == "logreg":
        z = pooled @ L["W"] + L["b"]
    else:
        z = np.tanh(pooled @ L["W1"] + L["b1"]) @ L["W2"] + L["b2"]
    return softmax(z)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_labels(params, sequences) -> np.ndarray:
    return np.argmax(predict_proba(params, sequences), axis=1)


def predict(params: ClassifierParams, x: Sequence[int]) -> tuple[np.ndarray, int]:
    probs = predict_proba(params, [x])[0]
    return probs, int(np.argmax(probs))


def sgd_train(init: ClassifierParams, data: DomainDataset | tuple, cfg: TrainConfig,
              targets: np.ndarray | None = None) -> ClassifierParams:
    """Train on the train split (or an explicit ``(sequences, labels)`` pair).

    ``targets`` overrides the one-hot labels with class-probability rows.
    """
    if isinstance(data, DomainDataset):
        seqs, labels = data.subset("train")
    else:
        seqs, labels = data
    if len(seqs) == 0:
        raise ValueError("no training examples")
    _check_ids(init, seqs)
    P = pooling_matrix(seqs, init.k)
    Y = one_hot(labels) if targets is None else np.asarray(targets, dtype=float)

    def build(tape: Tape, th: Var) -> Var:
        return ad.softmax_xent(logits_on_tape(init, th, pooled_on_tape(init, th, P)), Y)

    theta, log = ad.descend(init.theta, build, len(seqs), cfg.epochs_base,
                            cfg.learning_rate, cfg.early_stop_loss)
    return replace(init, theta=theta, log=log)


def mean_loss(params: ClassifierParams, seqs, labels) -> float:
    probs = predict_proba(params, seqs)
    p = probs[np.arange(len(labels)), np.asarray(labels, dtype=int)]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


# ---------------------------------------------------------------------------
# parameter deltas


def apply_delta(base: ClassifierParams, delta: np.ndarray) -> ClassifierParams:
    delta = np.asarray(delta, dtype=float)
    if delta.shape != base.theta.shape:
        raise ShapeError(f"delta has shape {delta.shape}, parameters have {base.theta.shape}")
    return base.with_theta(base.theta + delta)


def param_distance(a: ClassifierParams, b: ClassifierParams, metric: str = "l2") -> float:
    if not a.same_layout(b):
        raise ShapeError("parameter layouts differ")
    metric = metric.lower()
    if metric == "l2":
        return float(np.linalg.norm(a.theta - b.theta))
    if metric == "cosine":
        na, nb = np.linalg.norm(a.theta), np.linalg.norm(b.theta)
        if na == 0 or nb == 0:
            raise ValueError("cosine distance undefined for a zero vector")
        return float(1.0 - a.theta @ b.theta / (na * nb))
    raise ValueError(f"unknown metric {metric!r}")


# ---------------------------------------------------------------------------
# meta learner: pooled own-embedding features -> tanh hidden -> delta theta


def _meta_shapes(k, d, hidden, out_dim):
    return [("E", (k, d)), ("W1", (d, hidden)), ("b1", (hidden,)),
            ("W2", (hidden, out_dim)), ("b2", (out_dim,))]


@dataclass(frozen=True, eq=False)
class MetaParams:
    k: int
    d: int
    hidden: int
    out_dim: int
    theta: np.ndarray
    log: TrainLog | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim != 1 or theta.size != self.size_for(self.k, self.d, self.hidden, self.out_dim):
            raise ShapeError("meta parameter vector has the wrong length")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @staticmethod
    def size_for(k, d, hidden, out_dim) -> int:
        return sum(math.prod(s) for _, s in _meta_shapes(k, d, hidden, out_dim))

    @property
    def shapes(self):
        return _meta_shapes(self.k, self.d, self.hidden, self.out_dim)

    def layers(self):
        return _unflatten(self.theta, self.shapes)


def meta_hidden_units(base_size: int, k: int, d: int, capacity: float) -> int:
    """Smallest hidden width with |theta_mf| >= capacity * |theta|."""
    fixed = k * d + base_size  # embeddings + output bias
    per_unit = d + 1 + base_size
    return max(1, math.ceil((capacity * base_size - fixed) / per_unit))


def init_meta(base: ClassifierParams, d: int | None = None, capacity: float = 4.0,
              seed: int = 0, hidden: int | None = None) -> MetaParams:
    """Seeded uniform init for the input side; output layer starts at zero,
    so an untrained meta learner predicts a zero delta."""
    d = d or base.d
    out = base.theta.size
    hidden = hidden or meta_hidden_units(out, base.k, d, capacity)
    rng = np.random.default_rng(seed)
    n_in = base.k * d + d * hidden + hidden
    theta = np.concatenate([rng.uniform(-INIT_SCALE, INIT_SCALE, n_in), np.zeros(hidden * out + out)])
    return MetaParams(base.k, d, hidden, out, theta)


def meta_on_tape(mf: MetaParams, th: Var, P: np.ndarray) -> Var:
    L = _unflatten_var(th, mf.shapes)
    pooled = ad.matmul(th.tape.const(P), L["E"])
    return ad.tanh(pooled @ L["W1"] + L["b1"]) @ L["W2"] + L["b2"]


def meta_predict_many(mf: MetaParams, sequences) -> np.ndarray:
    for s in sequences:
        if len(s) == 0 or max(s) >= mf.k:
            raise ShapeError("sequence incompatible with the meta learner's vocabulary")
    L = mf.layers()
    pooled = pooling_matrix(sequences, mf.k) @ L["E"]
    return np.tanh(pooled @ L["W1"] + L["b1"]) @ L["W2"] + L["b2"]


def meta_predict(mf: MetaParams, x: Sequence[int]) -> np.ndarray:
    return meta_predict_many(mf, [x])[0]


def meta_train(mf: MetaParams, sequences, deltas: np.ndarray, epochs: int, learning_rate: float,
               early_stop_loss: float | None = None) -> MetaParams:
    """Minimise sum_i 0.5 * ||mf(x_i) - delta_i||^2 by full-batch descent."""
    deltas = np.asarray(deltas, dtype=float)
    if deltas.shape != (len(sequences), mf.out_dim):
        raise ShapeError(f"deltas must be ({len(sequences)}, {mf.out_dim})")
    P = pooling_matrix(sequences, mf.k)

    def build(tape: Tape, th: Var) -> Var:
        r = meta_on_tape(mf, th, P) - tape.const(deltas)
        return ad.vsum(ad.square(r)) * 0.5

    theta, log = ad.descend(mf.theta, build, len(sequences), epochs, learning_rate, early_stop_loss)
    return replace(mf, theta=theta, log=log)


def batch_predict_with_deltas(base: ClassifierParams, sequences, deltas: np.ndarray) -> np.ndarray:
    """Class probabilities where sequence i is scored by theta + deltas[i]."""
    deltas = np.asarray(deltas, dtype=float)
    if deltas.shape != (len(sequences), base.theta.size):
        raise ShapeError("one delta per sequence, each of length |theta|")
    _check_ids(base, sequences)
    P = pooling_matrix(sequences, base.k)
    out = np.empty((len(sequences), N_CLASSES))
    # chunked to bound the (batch, k, d) temporaries
    for lo in range(0, len(sequences), 256):
        hi = min(lo + 256, len(sequences))
        th = base.theta[None, :] + deltas[lo:hi]
        L, pos = {}, 0
        for name, shape in base.shapes:
            n = math.prod(shape)
            L[name] = th[:, pos:pos + n].reshape((hi - lo, *shape))
            pos += n
        pooled = np.einsum("bk,bkd->bd", P[lo:hi], L["E"])
        if base.arch == "logreg":
            z = np.einsum("bd,bdc->bc", pooled, L["W"]) + L["b"]
        else:
            h = np.tanh(np.einsum("bd,bdh->bh", pooled, L["W1"]) + L["b1"])
            z = np.einsum("bh,bhc->bc", h, L["W2"]) + L["b2"]
        out[lo:hi] = softmax(z)
    return out


# ---------------------------------------------------------------------------
# persistence

PARAMS_TAG = "XFERLAB-PARAMS v1"
META_TAG = "XFERLAB-META v1"


def _write_floats(path, header: str, values: np.ndarray):
    body = "\n".join(" ".join(repr(float(v)) for v in values[i:i + 8]) for i in range(0, len(values), 8))
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(header + "\n" + body + "\n", encoding="utf-8")
    tmp.replace(path)


def _read_floats(path, tag: str) -> tuple[list[str], np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(tag + " "):
        raise ValueError(f"{path}: missing {tag!r} header")
    header = lines[0][len(tag):].split()
    values = np.array([float(v) for line in lines[1:] for v in line.split()])
    return header, values


def save_params(params: ClassifierParams, path):
    _write_floats(path, f"{PARAMS_TAG} {params.arch_tag} {params.k} {params.d} {params.theta.size}",
                  params.theta)


def load_params(path, seed: int = 0) -> ClassifierParams:
    header, values = _read_floats(path, PARAMS_TAG)
    arch_tag, k, d, n = header[0], int(header[1]), int(header[2]), int(header[3])
    if values.size != n:
        raise ValueError(f"{path}: header says {n} values, found {values.size}")
    arch, hidden = parse_arch(arch_tag)
    return ClassifierParams(arch, k, d, values, hidden, seed)


def save_meta(mf: MetaParams, path):
    _write_floats(path, f"{META_TAG} {mf.hidden}x{mf.out_dim} {mf.k} {mf.d} {mf.theta.size}", mf.theta)


def load_meta(path) -> MetaParams:
    header, values = _read_floats(path, META_TAG)
    hidden, out_dim = (int(v) for v in header[0].split("x"))
    k, d, n = int(header[1]), int(header[2]), int(header[3])
    if values.size != n:
        raise ValueError(f"{path}: header says {n} values, found {values.size}")
    return MetaParams(k, d, hidden, out_dim, values)
