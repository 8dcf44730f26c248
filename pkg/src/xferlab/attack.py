"""Discrete FGSM for token sequences and the similar-domain attack pipeline."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .corpus import UNK_ID, DomainDataset, Vocabulary, pooling_matrix
from .models import ClassifierParams, logits_on_tape, one_hot, predict_labels


class AttackError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdvConfig:
    epsilon: float = 0.4
    max_tries: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.max_tries < 1:
            raise ValueError("max_tries must be >= 1")


def budget(epsilon: float, n: int) -> int:
    """ceil(epsilon * n), guarded against float noise such as 0.7 * 10 = 7.000000000000001."""
    return min(n, math.ceil(epsilon * n - 1e-9))


@dataclass
class Perturbation:
    tokens: tuple[int, ...]
    positions: tuple[int, ...]
    succeeded: bool


def pooled_gradients(params: ClassifierParams, pooled: np.ndarray, labels) -> np.ndarray:
    """Row i: d loss_i / d pooled_i for the summed cross-entropy."""
    tape = Tape()
    th = tape.const(params.theta)
    pv = tape.leaf(pooled)
    tape.output(ad.softmax_xent(logits_on_tape(params, th, pv), one_hot(labels)))
    return ad.grad(tape, [pv]).reshape(pooled.shape)


def nearest_tokens(E: np.ndarray, points: np.ndarray, current=None) -> np.ndarray:
    """Index of the L2-nearest embedding row for each point; UNK excluded.

    Exact ties prefer a token other than ``current`` (the step is meant to
    move), then the lowest id.
    """
    d2 = (np.sum(E * E, axis=1)[None, :] - 2.0 * points @ E.T) + np.sum(points * points, axis=1)[:, None]
    d2[:, UNK_ID] = np.inf
    tie = d2 == d2.min(axis=1, keepdims=True)
    if current is not None:
        rows = np.arange(len(points))
        alt = tie.copy()
        alt[rows, np.asarray(current)] = False
        moved = alt.any(axis=1)
        tie[moved] = alt[moved]
    return np.argmax(tie, axis=1)


def fgsm_batch(params: ClassifierParams, sequences: Sequence[Sequence[int]], labels,
               cfg: AdvConfig, rngs: Sequence[np.random.Generator]) -> list[Perturbation]:
    """Run discrete FGSM independently on every (sequence, label) pair.

    Each try restarts from the clean sequence, samples ceil(eps*N) distinct
    positions and, one position at a time, moves that position's embedding by
    eps * sign(gradient) and snaps it to the nearest vocabulary token.  Tries
    stop as soon as the model's label differs from ``labels``.
    """
    labels = np.asarray(labels, dtype=int)
    E = params.embeddings
    n = len(sequences)
    base = [np.array(s, dtype=int) for s in sequences]
    cur = [b.copy() for b in base]
    done = predict_labels(params, sequences) != labels
    touched: list[tuple[int, ...]] = [() for _ in range(n)]
    active = np.flatnonzero(~done)
    for _ in range(cfg.max_tries):
        if active.size == 0:
            break
        plans = {}
        for i in active:
            N = len(base[i])
            cur[i] = base[i].copy()
            m = budget(cfg.epsilon, N)
            plans[i] = rngs[i].choice(N, size=m, replace=False) if m else np.zeros(0, dtype=int)
        steps = max((len(p) for p in plans.values()), default=0)
        for j in range(steps):
            rows = [i for i in active if j < len(plans[i])]
            P = pooling_matrix([cur[i] for i in rows], params.k)
            g = pooled_gradients(params, P @ E, labels[rows])
            if not np.all(np.isfinite(g)):
                raise AttackError("non-finite input gradient")
            # mean pooling: d loss / d e_n = g / N for every position n
            pos = np.array([plans[i][j] for i in rows])
            old = np.array([cur[i][p] for i, p in zip(rows, pos)])
            shifted = E[old] + cfg.epsilon * np.sign(g)
            new = nearest_tokens(E, shifted, old)
            for i, p, w in zip(rows, pos, new):
                cur[i][p] = w
        if steps == 0:
            break
        preds = predict_labels(params, [cur[i] for i in active])
        for i, pr in zip(active, preds):
            touched[i] = tuple(sorted(int(p) for p in np.flatnonzero(cur[i] != base[i])))
            done[i] = pr != labels[i]
        active = active[~done[active]]
    return [Perturbation(tuple(int(t) for t in cur[i]), touched[i], bool(done[i])) for i in range(n)]


def example_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def fgsm_text(params: ClassifierParams, x: Sequence[int], y: int, cfg: AdvConfig,
              rng: np.random.Generator | None = None) -> Perturbation:
    return fgsm_batch(params, [x], [y], cfg, [rng or example_rng(cfg.seed, 0)])[0]


def perturb_dataset(params: ClassifierParams, sequences, labels, cfg: AdvConfig,
                    stream: int = 0) -> list[Perturbation]:
    rngs = [np.random.default_rng([cfg.seed, stream, i]) for i in range(len(sequences))]
    return fgsm_batch(params, sequences, labels, cfg, rngs)


@dataclass
class AdvItem:
    src_idx: int
    label: int
    original: tuple[int, ...]
    perturbed: tuple[int, ...]
    positions: tuple[int, ...]
    succeeded: bool = True


@dataclass
class AdversarialSet:
    items: list[AdvItem]
    epsilon: float
    domain: str = ""

    def __len__(self):
        return len(self.items)

    @property
    def sequences(self):
        return [it.perturbed for it in self.items]

    @property
    def labels(self):
        return np.array([it.label for it in self.items], dtype=int)

    def save(self, path, vocab: Vocabulary):
        rows = ["src_idx\tlabel\torig_tokens\tadv_tokens\tpositions"]
        for it in self.items:
            rows.append("\t".join([str(it.src_idx), str(it.label), " ".join(vocab.decode(it.original)),
                                   " ".join(vocab.decode(it.perturbed)),
                                   ",".join(str(p) for p in it.positions)]))
        tmp = Path(str(path) + ".tmp")
        tmp.write_text("\n".join(rows) + "\n", encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def load(cls, path, vocab: Vocabulary, epsilon: float = float("nan"), domain: str = ""):
        items = []
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        for line in lines[1:]:
            if not line:
                continue
            src, lab, orig, adv, pos = line.split("\t")
            items.append(AdvItem(int(src), int(lab), tuple(vocab.id(t) for t in orig.split()),
                                 tuple(vocab.id(t) for t in adv.split()),
                                 tuple(int(p) for p in pos.split(",") if p)))
        return cls(items, epsilon, domain or Path(path).stem)


def build_attack_set(substitute: ClassifierParams, attack_data: DomainDataset, cfg: AdvConfig,
                     split: str = "test") -> AdversarialSet:
    """Perturb the substitute's correctly classified test examples; keep those that fool it."""
    idx = attack_data.test_idx if split == "test" else np.arange(len(attack_data))
    seqs = [attack_data.sequences[i] for i in idx]
    labels = attack_data.labels[idx]
    correct = np.flatnonzero(predict_labels(substitute, seqs) == labels)
    if correct.size == 0:
        raise AttackError(f"substitute classifies no {attack_data.name} {split} example correctly")
    rngs = [example_rng(cfg.seed, int(idx[c])) for c in correct]
    results = fgsm_batch(substitute, [seqs[c] for c in correct], labels[correct], cfg, rngs)
    items = [AdvItem(int(idx[c]), int(labels[c]), tuple(seqs[c]), r.tokens, r.positions, True)
             for c, r in zip(correct, results) if r.succeeded]
    return AdversarialSet(items, cfg.epsilon, attack_data.name)


def cross_domain_attack(target: ClassifierParams, adv: AdversarialSet) -> float:
    """Target accuracy on the transferred adversarial examples (lower = stronger attack)."""
    if len(adv) == 0:
        raise AttackError("empty adversarial set")
    return float(np.mean(predict_labels(target, adv.sequences) == adv.labels))
