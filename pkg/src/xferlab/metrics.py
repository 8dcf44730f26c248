"""Accuracy metrics, transfer loss, the H-delta-H lower bound and theory checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import spearmanr

from .attack import AdvConfig, AdversarialSet, build_attack_set, cross_domain_attack
from .corpus import UNK_ID, DomainDataset, shared_vocab
from .models import ClassifierParams, predict_labels, predict_proba


class MetricError(ValueError):
    pass


def accuracy(params: ClassifierParams, data) -> float:
    """Fraction of argmax-correct predictions.

    ``data`` is a ``(sequences, labels)`` pair, an AdversarialSet, or a
    DomainDataset (scored on its test split).
    """
    if isinstance(data, DomainDataset):
        seqs, labels = data.subset("test")
    elif isinstance(data, AdversarialSet):
        seqs, labels = data.sequences, data.labels
    else:
        seqs, labels = data
    if len(seqs) == 0:
        raise MetricError("accuracy of an empty set is undefined")
    return float(np.mean(predict_labels(params, seqs) == np.asarray(labels)))


def error_rate(params, data) -> float:
    return 1.0 - accuracy(params, data)


def transfer_loss(attack_data, target: DomainDataset, theta_i: ClassifierParams) -> float:
    """tf(X_j, X_i) = e(X_j, X_i) - e(X_i, X_i), both on held-out examples."""
    return error_rate(theta_i, attack_data) - error_rate(theta_i, target)


@dataclass(frozen=True)
class HdhConfig:
    lam: float = 0.05

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


def hdh_bound_from_tf(tf: float, lam: float) -> float:
    return max(0.0, tf - lam)


def hdh_lower_bound(adv, target: DomainDataset, theta_i: ClassifierParams,
                    cfg: HdhConfig = HdhConfig()) -> float:
    return hdh_bound_from_tf(transfer_loss(adv, target, theta_i), cfg.lam)


@dataclass
class AttackReport:
    target_domain: str
    attack_domain: str
    original_acc: float
    intra_attack_acc: float
    unperturbed_acc: float
    after_attack_acc: float
    shared_vocab: float
    transfer_loss: float
    n_adv: int = 0

    def __post_init__(self):
        for name in ("original_acc", "intra_attack_acc", "unperturbed_acc", "after_attack_acc"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise MetricError(f"{name}={v} outside [0, 1]")


def attack_report(target_model: ClassifierParams, substitute_model: ClassifierParams,
                  target_data: DomainDataset, attack_data: DomainDataset, adv_cfg: AdvConfig,
                  adv: AdversarialSet | None = None) -> AttackReport:
    """All four accuracies for one (target, attack) pair.

    The intra-attack accuracy attacks the target model with FGSM against
    itself on its own test split.
    """
    original = accuracy(target_model, target_data)
    intra = cross_domain_attack(target_model, build_attack_set(target_model, target_data, adv_cfg))
    unperturbed = accuracy(target_model, attack_data)
    if adv is None:
        adv = build_attack_set(substitute_model, attack_data, adv_cfg)
    after = cross_domain_attack(target_model, adv)
    return AttackReport(target_data.name, attack_data.name, original, intra, unperturbed, after,
                        shared_vocab(target_data, attack_data),
                        transfer_loss(attack_data, target_data, target_model), len(adv))


def uniformity_check(params: ClassifierParams, n_samples: int = 1000, seed: int = 0,
                     length_range: tuple[int, int] = (8, 16)) -> tuple[np.ndarray, float]:
    """Mean class probabilities over uniformly random token sequences."""
    if n_samples < 100:
        raise MetricError("uniformity_check needs at least 100 samples")
    rng = np.random.default_rng(seed)
    lo, hi = length_range
    seqs = [tuple(rng.integers(UNK_ID + 1, params.k, size=rng.integers(lo, hi + 1)))
            for _ in range(n_samples)]
    mean = predict_proba(params, seqs).mean(axis=0)
    return mean, float(np.max(np.abs(mean - 1.0 / mean.size)))


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 4:
        raise MetricError("need at least 4 points for a correlation")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise MetricError("correlation undefined: one variable is constant")
    return float(spearmanr(x, y).statistic)


def similarity_sweep(reports: Sequence[AttackReport]) -> float:
    """Spearman correlation between shared vocabulary and after-attack accuracy."""
    return spearman([r.shared_vocab for r in reports], [r.after_attack_acc for r in reports])


REPORT_COLUMNS = ["target_domain", "attack_domain", "original_acc", "intra_attack_acc",
                  "unperturbed_acc", "after_attack_acc", "shared_vocab", "transfer_loss",
                  "defense", "after_defense_acc"]


def report_rows(report: AttackReport, defenses: dict[str, float]) -> list[list[str]]:
    """One CSV row per defense (a single row with empty defense fields if none)."""
    head = [report.target_domain, report.attack_domain] + [
        f"{getattr(report, f):.6f}" for f in ("original_acc", "intra_attack_acc", "unperturbed_acc",
                                              "after_attack_acc", "shared_vocab", "transfer_loss")]
    if not defenses:
        return [head + ["", ""]]
    return [head + [name, f"{acc:.6f}"] for name, acc in defenses.items()]

