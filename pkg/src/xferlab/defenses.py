"""Baseline defenses and Learn2Weight training / inference."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .attack import AdvConfig, fgsm_batch
from .autodiff import Tape, TrainConfig, TrainLog, Var
from .corpus import DomainDataset, pooling_matrix
from .models import (ClassifierParams, MetaParams, ShapeError, apply_delta, batch_predict_with_deltas,
                     init_meta, logits_on_tape, meta_predict, meta_predict_many, meta_train, one_hot,
                     pooled_on_tape, predict, predict_proba, sgd_train)
from .psets import PerturbationSetBundle

log = logging.getLogger(__name__)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("XFERLAB_THREADS", "1")))
    except ValueError:
        return 1


def adversarial_training(target: DomainDataset, init: ClassifierParams, cfg: TrainConfig,
                         adv_cfg: AdvConfig = AdvConfig()) -> ClassifierParams:
    """Each epoch: FGSM every training example against the current weights,
    then take one step on the clean + adversarial union (2x examples)."""
    seqs, labels = target.subset("train")
    if not seqs:
        raise ValueError("empty training split")
    Y2 = one_hot(np.concatenate([labels, labels]))
    P_clean = pooling_matrix(seqs, init.k)
    params = init
    tlog = TrainLog()
    for epoch in range(cfg.epochs_base):
        rngs = [np.random.default_rng([adv_cfg.seed, epoch, i]) for i in range(len(seqs))]
        adv = fgsm_batch(params, seqs, labels, adv_cfg, rngs)
        P = np.vstack([P_clean, pooling_matrix([a.tokens for a in adv], init.k)])

        def build(tape: Tape, th: Var) -> Var:
            return ad.softmax_xent(logits_on_tape(init, th, pooled_on_tape(init, th, P)), Y2)

        theta, step_log = ad.descend(params.theta, build, len(Y2), 1, cfg.learning_rate,
                                     cfg.early_stop_loss)
        tlog.losses.extend(step_log.losses)
        params = params.with_theta(theta)
        if step_log.stopped_early:
            tlog.stopped_early = True
            break
        tlog.epochs_run += 1
    return replace(params, log=tlog)


@dataclass
class SoftLabelDataset:
    sequences: list[tuple[int, ...]]
    targets: np.ndarray

    def __post_init__(self):
        if len(self.sequences) != len(self.targets):
            raise ValueError("one probability row per sequence")
        if not np.allclose(self.targets.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("soft labels must be normalised")


def soft_labels(teacher: ClassifierParams, sequences) -> SoftLabelDataset:
    return SoftLabelDataset(list(sequences), predict_proba(teacher, sequences))


def defensive_distillation(target: DomainDataset, init: ClassifierParams, cfg: TrainConfig,
                           student_init: ClassifierParams | None = None,
                           ) -> tuple[ClassifierParams, ClassifierParams]:
    """Teacher on hard labels, then a fresh student on the teacher's probabilities.

    Returns (student, teacher).  No temperature is applied.
    """
    teacher = sgd_train(init, target, cfg)
    seqs, labels = target.subset("train")
    soft = soft_labels(teacher, seqs)
    student = sgd_train(student_init or init, (soft.sequences, labels), cfg, targets=soft.targets)
    return student, teacher


def ps_adversarial_training(target: DomainDataset, bundle: PerturbationSetBundle,
                            init: ClassifierParams, cfg: TrainConfig) -> ClassifierParams:
    """One static training run on the target train split plus every perturbation set's.

    The step is scaled by |target train| / |union| so the summed gradient keeps
    the magnitude it has in plain training.
    """
    if len(bundle) == 0:
        raise ValueError("perturbation-set adversarial training needs a non-empty bundle")
    seqs, labels = target.subset("train")
    n_target = len(seqs)
    seqs, labels = list(seqs), [labels]
    for s in bundle.sets:
        sq, lb = s.data.subset("train")
        seqs.extend(sq)
        labels.append(lb)
    scaled = replace(cfg, learning_rate=cfg.learning_rate * n_target / len(seqs))
    return sgd_train(init, (seqs, np.concatenate(labels)), scaled)


# ---------------------------------------------------------------------------
# Learn2Weight


@dataclass
class DeltaEntry:
    domain: str
    data: DomainDataset
    delta: np.ndarray


@dataclass
class DeltaStore:
    entries: list[DeltaEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def add(self, domain, data, delta):
        delta = np.asarray(delta, dtype=float)
        if self.entries and delta.shape != self.entries[0].delta.shape:
            raise ShapeError(f"delta for {domain} has shape {delta.shape}, store holds "
                             f"{self.entries[0].delta.shape}")
        self.entries.append(DeltaEntry(domain, data, delta))

    def training_pairs(self, split: str = "train"):
        seqs, deltas = [], []
        for e in self.entries:
            sq, _ = e.data.subset(split)
            seqs.extend(sq)
            deltas.append(np.repeat(e.delta[None, :], len(sq), axis=0))
        return seqs, np.vstack(deltas)

    def save(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = []
        for i, e in enumerate(self.entries):
            fname = f"delta_{i:02d}.txt"
            (out_dir / fname).write_text(" ".join(repr(float(v)) for v in e.delta) + "\n", encoding="utf-8")
            lines.append(f"{e.domain}\t{fname}")
        (out_dir / "deltas.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class L2WConfig:
    capacity: float = 4.0
    meta_d: int | None = None
    meta_lr: float = 0.05
    meta_early_stop: float | None = None
    seed: int = 0


def domain_deltas(bundle: PerturbationSetBundle, target: DomainDataset, theta_i: ClassifierParams,
                  init: ClassifierParams, cfg: TrainConfig) -> DeltaStore:
    """Train one base model per perturbation set from the shared init and store theta_j - theta_i.

    The target domain's own entry is theta_i - theta_i = 0.
    """
    if not init.same_layout(theta_i):
        raise ShapeError("shared initialisation and theta_i differ in layout")
    store = DeltaStore()
    store.add(target.name, target, np.zeros_like(theta_i.theta))
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        trained = list(pool.map(lambda s: sgd_train(init, s.data, cfg), bundle.sets))
    for s, theta_j in zip(bundle.sets, trained):
        store.add(s.data.name, s.data, theta_j.theta - theta_i.theta)
    return store


def l2w_train(bundle: PerturbationSetBundle, target: DomainDataset, theta_i: ClassifierParams,
              init: ClassifierParams, cfg: TrainConfig, l2w: L2WConfig = L2WConfig(),
              ) -> tuple[MetaParams, DeltaStore]:
    if len(bundle) == 0:
        log.warning("empty perturbation-set bundle: meta learner sees only the target domain")
    store = domain_deltas(bundle, target, theta_i, init, cfg)
    seqs, deltas = store.training_pairs("train")
    mf = init_meta(theta_i, d=l2w.meta_d, capacity=l2w.capacity, seed=l2w.seed)
    mf = meta_train(mf, seqs, deltas, cfg.epochs_meta, l2w.meta_lr, l2w.meta_early_stop)
    return mf, store


def meta_mse(mf: MetaParams, store: DeltaStore, split: str = "train") -> float:
    seqs, deltas = store.training_pairs(split)
    return float(np.mean((meta_predict_many(mf, seqs) - deltas) ** 2))


def l2w_infer(x, mf: MetaParams, theta_i: ClassifierParams) -> int:
    """Label of f(theta_i + mf(x); x)."""
    if mf.out_dim != theta_i.theta.size:
        raise ShapeError("meta learner output width does not match |theta|")
    return predict(apply_delta(theta_i, meta_predict(mf, x)), x)[1]


def l2w_predict(mf: MetaParams, theta_i: ClassifierParams, sequences) -> np.ndarray:
    if mf.out_dim != theta_i.theta.size:
        raise ShapeError("meta learner output width does not match |theta|")
    probs = batch_predict_with_deltas(theta_i, sequences, meta_predict_many(mf, sequences))
    return np.argmax(probs, axis=1)


def l2w_accuracy(mf: MetaParams, theta_i: ClassifierParams, sequences, labels) -> float:
    if len(sequences) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(l2w_predict(mf, theta_i, sequences) == np.asarray(labels)))
