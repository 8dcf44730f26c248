"""Perturbation sets: synthetic domains built from the target data alone.

For each of T slots, FGSM-perturb the whole target corpus against the target
model at rate eps; accept the candidate when its transfer loss stays within
``d_max`` and it increases the spread of transfer losses across the bundle,
otherwise lower eps by ``gamma`` (never below ``eps_min``) and try again,
for at most R attempts.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .attack import AdvConfig, perturb_dataset
from .corpus import DomainDataset, Vocabulary, load_domain, write_corpus
from .metrics import error_rate, transfer_loss
from .models import ClassifierParams


class PerturbationSetError(RuntimeError):
    pass


@dataclass(frozen=True)
class PsetConfig:
    T: int = 10
    R: int = 10
    d_max: float = 0.1
    eps0: float = 0.9
    gamma: float = 0.05
    eps_min: float = 0.1
    adv_tries: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.T < 1 or self.R < 1:
            raise ValueError("T and R must be >= 1")
        if not self.d_max > 0:
            raise ValueError("d_max must be positive")
        if not 0 <= self.eps_min <= self.eps0 <= 1:
            raise ValueError("need 0 <= eps_min <= eps0 <= 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


@dataclass
class Attempt:
    r: int
    epsilon: float
    tf: float
    outcome: str  # "accepted" | "too-far" | "no-diversity"


@dataclass
class PerturbationSet:
    data: DomainDataset
    epsilon: float
    tf: float
    slot: int


@dataclass
class PerturbationSetBundle:
    sets: list[PerturbationSet] = field(default_factory=list)
    attempts: dict[int, list[Attempt]] = field(default_factory=dict)
    failed_slots: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.sets)

    @property
    def tfs(self) -> list[float]:
        return [s.tf for s in self.sets]


def bundle_diversity(tfs, candidate_tf: float) -> tuple[float, float]:
    """(variance with the candidate, variance without it) over per-set transfer losses."""
    tfs = list(tfs)
    without = float(np.var(tfs)) if tfs else 0.0
    return float(np.var(tfs + [candidate_tf])), without


def accepts(tfs, candidate_tf: float) -> bool:
    if not tfs:
        return True
    with_, without = bundle_diversity(tfs, candidate_tf)
    return with_ > without


def adversarial_copy(target: DomainDataset, theta_i: ClassifierParams, epsilon: float,
                     tries: int, seed: int, stream: int, name: str) -> DomainDataset:
    cfg = AdvConfig(epsilon=epsilon, max_tries=tries, seed=seed)
    res = perturb_dataset(theta_i, target.sequences, target.labels, cfg, stream=stream)
    return target.replace_sequences([p.tokens for p in res], name=name)


def generate_perturbation_sets(target: DomainDataset, theta_i: ClassifierParams,
                               cfg: PsetConfig = PsetConfig()) -> PerturbationSetBundle:
    base_err = error_rate(theta_i, target)
    if base_err >= 0.5:
        raise PerturbationSetError(f"target model looks untrained (test error {base_err:.3f})")
    bundle = PerturbationSetBundle()
    for t in range(cfg.T):
        eps = cfg.eps0
        log = bundle.attempts.setdefault(t, [])
        for r in range(cfg.R):
            cand = adversarial_copy(target, theta_i, eps, cfg.adv_tries, cfg.seed,
                                    stream=t * cfg.R + r, name=f"{target.name}pset{t:02d}")
            tf = transfer_loss(cand, target, theta_i)
            if tf <= cfg.d_max:
                if accepts(bundle.tfs, tf):
                    log.append(Attempt(r, eps, tf, "accepted"))
                    bundle.sets.append(PerturbationSet(cand, eps, tf, t))
                    break
                log.append(Attempt(r, eps, tf, "no-diversity"))
            else:
                log.append(Attempt(r, eps, tf, "too-far"))
                eps = max(cfg.eps_min, round(eps - cfg.gamma, 12))
        else:
            bundle.failed_slots.append(t)
    if not bundle.sets:
        diag = "; ".join(f"slot {t}: " + ", ".join(f"eps={a.epsilon:.2f} tf={a.tf:.3f}" for a in at)
                         for t, at in bundle.attempts.items())
        raise PerturbationSetError(f"no perturbation set met tf <= {cfg.d_max}: {diag}")
    return bundle


def save_bundle(bundle: PerturbationSetBundle, out_dir, cfg: PsetConfig | None = None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in bundle.sets:
        fname = f"{s.data.name}.tsv"
        write_corpus(out_dir / fname, s.data.labels, s.data.texts())
        entries.append({"file": fname, "slot": s.slot, "epsilon": s.epsilon, "tf": s.tf,
                        "split_seed": s.data.split_seed})
    manifest = {"sets": entries, "failed_slots": bundle.failed_slots,
                "attempts": {str(t): [asdict(a) for a in at] for t, at in bundle.attempts.items()},
                "config": asdict(cfg) if cfg else None}
    tmp = out_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(out_dir / "manifest.json")


def load_bundle(out_dir, vocab: Vocabulary) -> PerturbationSetBundle:
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    bundle = PerturbationSetBundle(failed_slots=list(manifest.get("failed_slots", [])))
    for e in manifest["sets"]:
        data = load_domain(out_dir / e["file"], vocab, seed=e["split_seed"], name=Path(e["file"]).stem)
        bundle.sets.append(PerturbationSet(data, e["epsilon"], e["tf"], e["slot"]))
    for t, at in manifest.get("attempts", {}).items():
        bundle.attempts[int(t)] = [Attempt(**a) for a in at]
    return bundle
