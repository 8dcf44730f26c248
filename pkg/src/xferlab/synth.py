"""Synthetic sentiment-like domains with controlled vocabulary overlap.

A *family* fixes a base vocabulary of ``vocab_size`` tokens split into
positive-signal, negative-signal and filler roles.  A domain at overlap ``o``
keeps exactly ``floor(o * vocab_size)`` base tokens (spread across roles in
proportion to role size, nested across overlaps) and renames the rest with a
domain-specific prefix.  Two domains of one family built at overlap 1.0 share
every token; a domain at overlap 0.0 shares none with the base.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import write_corpus


@dataclass(frozen=True)
class SyntheticDomainSpec:
    name: str = "target"
    vocab_size: int = 60
    n_signal: int = 10
    overlap: float = 1.0
    examples_per_class: int = 200
    length_range: tuple[int, int] = (8, 16)
    signal_rate: float = 0.35
    noise_rate: float = 0.12
    family_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError("overlap must lie in [0, 1]")
        if self.examples_per_class < 1:
            raise ValueError("both classes need at least one example")
        if 2 * self.n_signal >= self.vocab_size:
            raise ValueError("signal tokens must leave room for filler")
        if not self.name.isalnum():
            raise ValueError("domain name must be alphanumeric (it prefixes token names)")
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise ValueError("bad length range")


def _roles(spec: SyntheticDomainSpec) -> dict[str, np.ndarray]:
    idx = np.arange(spec.vocab_size)
    s = spec.n_signal
    return {"pos": idx[:s], "neg": idx[s:2 * s], "fill": idx[2 * s:]}


def _name_seed(name: str) -> int:
    return zlib.crc32(name.encode())


def shared_indices(spec: SyntheticDomainSpec) -> np.ndarray:
    """Base-token indices this domain keeps; exactly floor(overlap * vocab_size) of them."""
    total = math.floor(spec.overlap * spec.vocab_size + 1e-9)
    roles = _roles(spec)
    quotas = {r: total * len(ix) / spec.vocab_size for r, ix in roles.items()}
    counts = {r: math.floor(q) for r, q in quotas.items()}
    # largest remainder so the counts add up exactly
    for r in sorted(quotas, key=lambda r: counts[r] - quotas[r])[: total - sum(counts.values())]:
        counts[r] += 1
    # one family-wide order per role: lower overlaps keep a subset of higher ones
    rng = np.random.default_rng([spec.family_seed, 1])
    keep = [rng.permutation(ix)[:counts[r]] for r, ix in roles.items()]
    return np.sort(np.concatenate(keep))


def token_names(spec: SyntheticDomainSpec) -> list[str]:
    keep = set(shared_indices(spec).tolist())
    return [f"w{i:03d}" if i in keep else f"{spec.name.lower()}w{i:03d}" for i in range(spec.vocab_size)]


def generate_domain(spec: SyntheticDomainSpec) -> tuple[list[int], list[str]]:
    """Return (labels, texts), classes interleaved 1, 0, 1, 0, ..."""
    names = np.array(token_names(spec))
    roles = _roles(spec)
    # token frequencies within a role are a family trait; sampling is per domain
    frng = np.random.default_rng([spec.family_seed, 2])
    weights = {r: frng.gamma(2.0, 1.0, size=len(ix)) for r, ix in roles.items()}
    weights = {r: w / w.sum() for r, w in weights.items()}
    rng = np.random.default_rng([spec.family_seed, _name_seed(spec.name), spec.seed, 3])
    lo, hi = spec.length_range
    labels, texts = [], []
    for _ in range(spec.examples_per_class):
        for y in (1, 0):
            own, other = ("pos", "neg") if y == 1 else ("neg", "pos")
            n = int(rng.integers(lo, hi + 1))
            u = rng.random(n)
            toks = []
            for ui in u:
                role = own if ui < spec.signal_rate else other if ui < spec.signal_rate + spec.noise_rate else "fill"
                toks.append(names[roles[role][rng.choice(len(roles[role]), p=weights[role])]])
            labels.append(y)
            texts.append(" ".join(toks))
    return labels, texts


def write_domain(spec: SyntheticDomainSpec, path) -> Path:
    path = Path(path)
    labels, texts = generate_domain(spec)
    tmp = path.with_name(path.name + ".tmp")
    try:
        write_corpus(tmp, labels, texts)
    except OSError as exc:
        raise OSError(f"cannot write synthetic corpus to {path}: {exc}") from exc
    tmp.replace(path)
    return path
