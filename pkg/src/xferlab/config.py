"""Experiment configuration: a flat ``key = value`` file with dotted keys.

Unknown keys and out-of-range values are errors that name the offending
field.  Relative paths resolve against the config file's directory.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .attack import AdvConfig
from .autodiff import TrainConfig
from .metrics import HdhConfig
from .models import parse_arch
from .psets import PsetConfig


class ConfigError(ValueError):
    pass


def _in(lo=None, hi=None, lo_open=False):
    def check(v):
        if lo is not None and (v <= lo if lo_open else v < lo):
            return False
        return hi is None or v <= hi
    lo_s = "(" if lo_open else "["
    desc = f"{lo_s}{'-inf' if lo is None else lo}, {'inf' if hi is None else hi}]"
    return check, desc


def _arch_ok(v):
    try:
        parse_arch(v)
    except ValueError:
        return False
    return True


def _domains_ok(v):
    try:
        _parse_domains(v)
    except ValueError:
        return False
    return True


def _parse_domains(v: str) -> list[tuple[str, float]]:
    out = []
    for item in v.split(","):
        name, _, ov = item.strip().partition(":")
        o = float(ov)
        if not name.isalnum() or not 0.0 <= o <= 1.0:
            raise ValueError(item)
        out.append((name, o))
    if not out:
        raise ValueError("no domains")
    return out


# key -> (type, default, (check, description)); a default of None means unset
SCHEMA: dict[str, tuple[type, Any, tuple[Callable, str] | None]] = {
    "seed": (int, 0, _in(0)),
    "seed.split": (int, None, _in(0)),
    "seed.attack": (int, None, _in(0)),
    "seed.pset": (int, None, _in(0)),
    "out": (str, "out", None),
    "model.arch": (str, "logreg", (_arch_ok, "logreg or mlp-<hidden>")),
    "model.d": (int, 8, _in(2)),
    # desk-scale defaults; the library dataclasses keep the reference values
    "train.lr": (float, 0.005, _in(0, lo_open=True)),
    "train.epochs_base": (int, 200, _in(0)),
    "train.epochs_meta": (int, 200, _in(0)),
    "train.early_stop": (float, 0.5, _in(0)),
    "attack.epsilon": (float, 0.4, _in(0, 1)),
    "attack.max_tries": (int, 10, _in(1)),
    "pset.T": (int, 10, _in(1)),
    "pset.R": (int, 10, _in(1)),
    "pset.d_max": (float, 0.1, _in(0, 1, lo_open=True)),
    "pset.eps0": (float, 0.3, _in(0, 1)),
    "pset.gamma": (float, 0.05, _in(0, 1, lo_open=True)),
    "pset.eps_min": (float, 0.1, _in(0, 1)),
    "pset.adv_tries": (int, 1, _in(1)),
    "hdh.lambda": (float, 0.05, _in(0)),
    "l2w.capacity": (float, 4.0, _in(0, lo_open=True)),
    "l2w.meta_lr": (float, 1e-4, _in(0, lo_open=True)),
    "l2w.meta_d": (int, None, _in(2)),
    "data.target": (str, None, None),
    "data.attack": (str, None, None),
    "synth.domains": (str, "target:1.0,att070:0.7", (_domains_ok, "name:overlap[,name:overlap...]")),
    "synth.examples_per_class": (int, 200, _in(1)),
    "synth.vocab_size": (int, 60, _in(3)),
    "synth.n_signal": (int, 10, _in(1)),
    "synth.family_seed": (int, None, _in(0)),
    "report.inputs": (str, None, None),
}

PATH_KEYS = ("out", "data.target", "data.attack", "report.inputs")


def _cast(key: str, raw: str):
    typ = SCHEMA[key][0]
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {typ.__name__}, got {raw!r}") from None
    return raw


@dataclass
class ExperimentConfig:
    values: dict[str, Any]
    base_dir: Path

    @classmethod
    def from_text(cls, text: str, base_dir=".", overrides: dict | None = None) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        parser.optionxform = str  # keep pset.T distinct from pset.t
        try:
            parser.read_string("[xferlab]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from None
        values = {k: d for k, (_, d, _) in SCHEMA.items()}
        for key, raw in parser["xferlab"].items():
            if key not in SCHEMA:
                raise ConfigError(f"{key}: unknown config key")
            values[key] = _cast(key, raw.strip())
        for key, v in (overrides or {}).items():
            if v is not None:
                values[key] = v
        cfg = cls(values, Path(base_dir))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text, path.parent, overrides)

    def validate(self):
        for key, (_, _, rule) in SCHEMA.items():
            v = self.values[key]
            if v is None or rule is None:
                continue
            check, desc = rule
            if not check(v):
                raise ConfigError(f"{key}={v!r} outside its valid range {desc}")
        if self["pset.eps_min"] > self["pset.eps0"]:
            raise ConfigError(f"pset.eps_min={self['pset.eps_min']} exceeds pset.eps0={self['pset.eps0']}")
        if 2 * self["synth.n_signal"] >= self["synth.vocab_size"]:
            raise ConfigError("synth.n_signal leaves no filler tokens for synth.vocab_size")

    def __getitem__(self, key):
        return self.values[key]

    def seed_for(self, role: str) -> int:
        v = self.values.get(f"seed.{role}")
        return self["seed"] if v is None else v

    def path(self, key: str) -> Path | None:
        v = self.values[key]
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    def paths(self, key: str) -> list[Path]:
        v = self.values[key]
        if not v:
            return []
        return [p if p.is_absolute() else self.base_dir / p
                for p in (Path(s.strip()) for s in v.split(",") if s.strip())]

    @property
    def out_dir(self) -> Path:
        return self.path("out")

    def canonical(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values) if self.values[k] is not None)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def synth_domains(self) -> list[tuple[str, float]]:
        return _parse_domains(self["synth.domains"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs_base=self["train.epochs_base"], epochs_meta=self["train.epochs_meta"],
                           learning_rate=self["train.lr"], early_stop_loss=self["train.early_stop"],
                           seed=self["seed"])

    def adv_config(self) -> AdvConfig:
        return AdvConfig(self["attack.epsilon"], self["attack.max_tries"], self.seed_for("attack"))

    def pset_config(self) -> PsetConfig:
        return PsetConfig(self["pset.T"], self["pset.R"], self["pset.d_max"], self["pset.eps0"],
                          self["pset.gamma"], self["pset.eps_min"], self["pset.adv_tries"],
                          self.seed_for("pset"))

    def hdh_config(self) -> HdhConfig:
        return HdhConfig(self["hdh.lambda"])
