"""Desk-scale benchmark drivers over synthetic domain families.

These wire the modules together the way the acceptance suite and the CLI's
end-to-end runs do: one target domain, sibling attack domains at several
vocabulary overlaps, all encoded with one shared vocabulary.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attack import AdvConfig, AdversarialSet, build_attack_set, cross_domain_attack
from .autodiff import TrainConfig
from .corpus import DomainDataset, Vocabulary, tokenize
from .defenses import (L2WConfig, adversarial_training, defensive_distillation, l2w_accuracy,
                       l2w_train, ps_adversarial_training)
from .metrics import AttackReport, accuracy, attack_report, similarity_sweep
from .models import ClassifierParams, init_classifier, sgd_train
from .psets import PsetConfig, generate_perturbation_sets
from .synth import SyntheticDomainSpec, generate_domain


@dataclass(frozen=True)
class BenchConfig:
    arch: str = "logreg"
    d: int = 8
    vocab_size: int = 60
    examples_per_class: int = 500
    # summed-gradient steps: 0.05 diverges on ~800 training examples
    learning_rate: float = 0.005
    epochs_base: int = 200
    epochs_meta: int = 200
    epsilon: float = 0.4
    eps0: float = 0.3
    meta_lr: float = 1e-4
    capacity: float = 4.0

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(epochs_base=self.epochs_base, epochs_meta=self.epochs_meta,
                           learning_rate=self.learning_rate, seed=seed)


def encode_family(raw: list[tuple[str, list[int], list[str]]], split_seed: int) -> list[DomainDataset]:
    """(name, labels, texts) triples -> datasets over one shared vocabulary."""
    toks = [[tokenize(t) for t in texts] for _, _, texts in raw]
    vocab = Vocabulary.build(t for ts in toks for t in ts)
    return [DomainDataset.from_sequences(name, vocab, [vocab.encode(t) for t in ts], labels, split_seed,
                                         {w for t in ts for w in t})
            for (name, labels, _), ts in zip(raw, toks)]


def build_family(seed: int, overlaps, cfg: BenchConfig = BenchConfig()) -> list[DomainDataset]:
    """Target domain first, then one sibling per overlap, named ``att<overlap*100>``."""
    specs = [SyntheticDomainSpec("target", vocab_size=cfg.vocab_size, family_seed=seed, seed=seed,
                                 examples_per_class=cfg.examples_per_class)]
    specs += [SyntheticDomainSpec(f"att{round(o * 100):03d}", vocab_size=cfg.vocab_size, overlap=o,
                                  family_seed=seed, seed=seed, examples_per_class=cfg.examples_per_class)
              for o in overlaps]
    return encode_family([(s.name, *generate_domain(s)) for s in specs], seed)


@dataclass
class AttackBench:
    seed: int
    target: DomainDataset
    theta_i: ClassifierParams
    init: ClassifierParams
    reports: list[AttackReport]
    adv_sets: list[AdversarialSet]

    @property
    def spearman(self) -> float:
        return similarity_sweep(self.reports)


def run_attack_bench(seed: int, overlaps=(0.9, 0.7, 0.5, 0.3), cfg: BenchConfig = BenchConfig()) -> AttackBench:
    target, *attackers = build_family(seed, overlaps, cfg)
    tcfg = cfg.train_config(seed)
    init = init_classifier(cfg.arch, target.vocab, cfg.d, seed)
    theta_i = sgd_train(init, target, tcfg)
    adv_cfg = AdvConfig(epsilon=cfg.epsilon, seed=seed)
    reports, advs = [], []
    for a in attackers:
        theta_j = sgd_train(init, a, tcfg)
        adv = build_attack_set(theta_j, a, adv_cfg)
        reports.append(attack_report(theta_i, theta_j, target, a, adv_cfg, adv=adv))
        advs.append(adv)
    return AttackBench(seed, target, theta_i, init, reports, advs)


@dataclass
class DefenseBench:
    seed: int
    base_clean: float
    n_psets: int
    l2w_clean: float
    # per attack domain: after-attack and after-defense accuracies
    after_attack: dict[str, float] = field(default_factory=dict)
    after_defense: dict[str, dict[str, float]] = field(default_factory=dict)
    clean: dict[str, float] = field(default_factory=dict)


def run_defense_bench(seed: int, overlaps=(0.9, 0.7, 0.5), cfg: BenchConfig = BenchConfig(),
                      defenses=("advtrain", "distill", "ps-advtrain", "l2w")) -> DefenseBench:
    """Attack, then every defense, for one target and several sibling attack domains.

    Defenses depend only on the target, so each is trained once and scored on
    every attack domain's adversarial set.
    """
    ab = run_attack_bench(seed, overlaps, cfg)
    target, theta_i, init = ab.target, ab.theta_i, ab.init
    tcfg = cfg.train_config(seed)
    bundle = generate_perturbation_sets(target, theta_i, PsetConfig(eps0=cfg.eps0, seed=seed))
    ts, tl = target.subset("test")
    scorers, clean = {}, {}
    if "advtrain" in defenses:
        m = adversarial_training(target, init, tcfg, AdvConfig(epsilon=cfg.epsilon, seed=seed))
        scorers["advtrain"] = lambda adv, m=m: cross_domain_attack(m, adv)
        clean["advtrain"] = accuracy(m, target)
    if "distill" in defenses:
        m, _ = defensive_distillation(target, init, tcfg)
        scorers["distill"] = lambda adv, m=m: cross_domain_attack(m, adv)
        clean["distill"] = accuracy(m, target)
    if "ps-advtrain" in defenses:
        m = ps_adversarial_training(target, bundle, init, tcfg)
        scorers["ps-advtrain"] = lambda adv, m=m: cross_domain_attack(m, adv)
        clean["ps-advtrain"] = accuracy(m, target)
    mf, _ = l2w_train(bundle, target, theta_i, init, tcfg,
                      L2WConfig(capacity=cfg.capacity, meta_lr=cfg.meta_lr, seed=seed))
    if "l2w" in defenses:
        scorers["l2w"] = lambda adv: l2w_accuracy(mf, theta_i, adv.sequences, adv.labels)
    clean["l2w"] = l2w_accuracy(mf, theta_i, ts, tl)
    out = DefenseBench(seed, accuracy(theta_i, target), len(bundle), clean["l2w"], clean=clean)
    for rep, adv in zip(ab.reports, ab.adv_sets):
        out.after_attack[rep.attack_domain] = rep.after_attack_acc
        out.after_defense[rep.attack_domain] = {name: f(adv) for name, f in scorers.items()}
    return out


def summarize(values) -> str:
    v = np.asarray(list(values), dtype=float)
    return f"{v.mean():.3f} +/- {v.std():.3f}"
