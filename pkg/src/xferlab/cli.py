"""``xferlab`` command line: synth, train, attack, gen-psets, defend, eval, report.

Every subcommand reads a config file, checks its prerequisite artifacts up
front, writes its outputs atomically into the output directory and leaves a
``manifest_<step>.json`` with the config hash, seeds and artifact paths.
"""
from __future__ import annotations

import csv
import functools
import io
import json
import logging
from pathlib import Path

import click

from . import __version__
from .attack import AdversarialSet, AttackError, build_attack_set, cross_domain_attack
from .autodiff import TrainingDiverged
from .config import ConfigError, ExperimentConfig
from .corpus import CorpusError, Vocabulary, load_domain, read_corpus
from .defenses import (L2WConfig, adversarial_training, defensive_distillation, l2w_accuracy, l2w_train,
                       ps_adversarial_training)
from .metrics import REPORT_COLUMNS, accuracy, attack_report, report_rows
from .models import (ShapeError, init_classifier, load_meta, load_params, save_meta, save_params,
                     sgd_train)
from .psets import PerturbationSetError, generate_perturbation_sets, load_bundle, save_bundle
from .synth import SyntheticDomainSpec, write_domain

log = logging.getLogger("xferlab")

DEFENSES = ("advtrain", "distill", "ps-advtrain", "l2w")
EXPECTED_ERRORS = (ConfigError, CorpusError, AttackError, PerturbationSetError, TrainingDiverged,
                   ShapeError, ValueError, OSError)


def write_text_atomic(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


class Run:
    """Config plus bookkeeping for one subcommand invocation."""

    def __init__(self, step: str, cfg: ExperimentConfig):
        self.step, self.cfg = step, cfg
        self.out = cfg.out_dir
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []

    def need(self, path: Path, what: str = "") -> Path:
        if not path.exists():
            hint = f" ({what})" if what else ""
            raise click.ClickException(f"missing prerequisite {path}{hint}")
        self.inputs.append(path)
        return path

    def made(self, path: Path) -> Path:
        self.outputs.append(path)
        return path

    def artifact(self, name: str) -> Path:
        return self.out / name

    def target_path(self) -> Path:
        p = self.cfg.path("data.target")
        if p is None:
            raise click.ClickException("config key data.target is not set")
        return p

    def attack_paths(self) -> list[Path]:
        ps = self.cfg.paths("data.attack")
        if not ps:
            raise click.ClickException("config key data.attack is not set")
        names = [p.stem for p in ps] + [self.target_path().stem]
        if len(set(names)) != len(names):
            raise click.ClickException("corpus file names must be distinct: domains are named by file stem")
        return ps

    def vocab(self) -> Vocabulary:
        return Vocabulary.load(self.need(self.artifact("vocab.txt"), "run `xferlab train` first"))

    def domain(self, path: Path, vocab: Vocabulary):
        return load_domain(self.need(path), vocab, seed=self.cfg.seed_for("split"), name=path.stem)

    def model(self, name: str):
        return load_params(self.need(self.artifact(f"model_{name}.params"), "run `xferlab train` first"),
                           seed=self.cfg["seed"])

    def finish(self, manifest_name: str | None = None, **extra):
        cfg = self.cfg
        manifest = {
            "step": self.step,
            "version": __version__,
            "config_hash": cfg.digest(),
            "config": cfg.canonical().splitlines(),
            "seeds": {r: cfg.seed_for(r) for r in ("split", "attack", "pset")} | {"global": cfg["seed"]},
            "inputs": [str(p) for p in self.inputs],
            "outputs": [str(p) for p in self.outputs],
        } | extra
        path = self.artifact(manifest_name or f"manifest_{self.step}.json")
        write_text_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        for p in self.outputs:
            click.echo(f"wrote {p}")


def step(name: str):
    """Shared options, config loading and error reporting for a subcommand."""
    def deco(fn):
        @click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
                      help="flat key = value config file")
        @click.option("--seed", type=int, default=None, help="override the global seed")
        @click.option("--out", type=click.Path(file_okay=False), default=None,
                      help="output directory (overrides the config's out)")
        @functools.wraps(fn)
        def wrapper(config_path, seed, out, **kw):
            overrides = {"seed": seed, "out": str(Path(out).resolve()) if out else None}
            try:
                cfg = ExperimentConfig.load(config_path, overrides)
                cfg.out_dir.mkdir(parents=True, exist_ok=True)
                run = Run(name, cfg)
                run.inputs.append(Path(config_path))
                return fn(run, **kw)
            except click.ClickException:
                raise
            except EXPECTED_ERRORS as exc:
                raise click.ClickException(f"{name}: {exc}") from None
        return wrapper
    return deco


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="log progress to stderr")
def main(verbose):
    """Similar-domain adversarial attacks and defenses on bag-of-embeddings text classifiers."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@step("synth")
def synth(run: Run):
    """Write synthetic sibling domains (synth.domains) as corpus files."""
    cfg = run.cfg
    fam = cfg["synth.family_seed"]
    for name, overlap in cfg.synth_domains():
        spec = SyntheticDomainSpec(name, vocab_size=cfg["synth.vocab_size"], n_signal=cfg["synth.n_signal"],
                                   overlap=overlap, examples_per_class=cfg["synth.examples_per_class"],
                                   family_seed=cfg["seed"] if fam is None else fam, seed=cfg["seed"])
        run.made(write_domain(spec, run.artifact(f"{name}.tsv")))
    run.finish()


@main.command()
@step("train")
@click.option("--domain", default=None, help="train only this domain (file stem); default all")
def train(run: Run, domain):
    """Train the target model and one substitute per attack domain from a shared init."""
    cfg = run.cfg
    paths = [run.target_path()] + run.attack_paths()
    toks = [read_corpus(run.need(p))[1] for p in paths]
    vocab = Vocabulary.build(t for ts in toks for t in ts)
    vpath = run.artifact("vocab.txt")
    if vpath.exists() and Vocabulary.load(vpath) != vocab:
        raise click.ClickException(f"{vpath} was built from different corpora; use a fresh --out")
    if not vpath.exists():
        write_text_atomic(vpath, "\n".join(vocab.tokens) + "\n")
    run.made(vpath)
    init = init_classifier(cfg["model.arch"], vocab, cfg["model.d"], cfg["seed"])
    save_params(init, run.made(run.artifact("init.params")))
    selected = [p for p in paths if domain is None or p.stem == domain]
    if not selected:
        raise click.ClickException(f"no domain named {domain!r}; known: {', '.join(p.stem for p in paths)}")
    epochs = {}
    for p in selected:
        params = sgd_train(init, run.domain(p, vocab), cfg.train_config())
        save_params(params, run.made(run.artifact(f"model_{p.stem}.params")))
        epochs[p.stem] = params.log.epochs_run
        log.info("trained %s: %d epochs, final loss %.4f", p.stem, params.log.epochs_run, params.log.losses[-1])
    run.finish(f"manifest_train_{domain}.json" if domain else None, epochs=epochs)


@main.command()
@step("attack")
def attack(run: Run):
    """FGSM the attack domains' test splits against their substitute models."""
    vocab = run.vocab()
    sizes = {}
    for p in run.attack_paths():
        adv = build_attack_set(run.model(p.stem), run.domain(p, vocab), run.cfg.adv_config())
        adv.save(run.made(run.artifact(f"adv_{p.stem}.tsv")), vocab)
        sizes[p.stem] = len(adv)
    run.finish(adversarial_examples=sizes)


@main.command("gen-psets")
@step("gen-psets")
def gen_psets(run: Run):
    """Build the perturbation-set bundle from the target domain alone."""
    vocab = run.vocab()
    target = run.domain(run.target_path(), vocab)
    pcfg = run.cfg.pset_config()
    bundle = generate_perturbation_sets(target, run.model(target.name), pcfg)
    out = run.artifact("psets")
    save_bundle(bundle, out, pcfg)
    run.made(out / "manifest.json")
    run.finish(accepted=len(bundle), failed_slots=bundle.failed_slots)


@main.command()
@step("defend")
@click.option("--defense", type=click.Choice(DEFENSES), required=True)
def defend(run: Run, defense):
    """Train one defense for the target domain."""
    cfg = run.cfg
    vocab = run.vocab()
    target = run.domain(run.target_path(), vocab)
    init = load_params(run.need(run.artifact("init.params"), "run `xferlab train` first"), seed=cfg["seed"])
    tcfg = cfg.train_config()
    bundle = None
    if defense in ("ps-advtrain", "l2w"):
        bdir = run.artifact("psets")
        run.need(bdir / "manifest.json", "perturbation-set bundle; run `xferlab gen-psets` first")
        bundle = load_bundle(bdir, vocab)
    if defense == "advtrain":
        model = adversarial_training(target, init, tcfg, cfg.adv_config())
    elif defense == "distill":
        model, _ = defensive_distillation(target, init, tcfg)
    elif defense == "ps-advtrain":
        model = ps_adversarial_training(target, bundle, init, tcfg)
    else:
        theta_i = run.model(target.name)
        l2w = L2WConfig(capacity=cfg["l2w.capacity"], meta_d=cfg["l2w.meta_d"], meta_lr=cfg["l2w.meta_lr"],
                        seed=cfg["seed"])
        mf, store = l2w_train(bundle, target, theta_i, init, tcfg, l2w)
        save_meta(mf, run.made(run.artifact("defense_l2w.meta")))
        store.save(run.artifact("deltas"))
        run.made(run.artifact("deltas") / "deltas.tsv")
        run.finish(f"manifest_defend_{defense}.json", meta_epochs=mf.log.epochs_run if mf.log else 0)
        return
    save_params(model, run.made(run.artifact(f"defense_{defense}.params")))
    run.finish(f"manifest_defend_{defense}.json")


def _defense_scorers(run: Run, theta_i):
    """Name -> accuracy function for every defense artifact present in the output dir."""
    scorers = {}
    for name in DEFENSES:
        if name == "l2w":
            p = run.artifact("defense_l2w.meta")
            if p.exists():
                mf = load_meta(run.need(p))
                scorers[name] = lambda seqs, labels, mf=mf: l2w_accuracy(mf, theta_i, seqs, labels)
        else:
            p = run.artifact(f"defense_{name}.params")
            if p.exists():
                m = load_params(run.need(p))
                scorers[name] = lambda seqs, labels, m=m: accuracy(m, (seqs, labels))
    return scorers


@main.command("eval")
@step("eval")
def eval_(run: Run):
    """Score the target model and any trained defenses; write report.csv."""
    vocab = run.vocab()
    target = run.domain(run.target_path(), vocab)
    theta_i = run.model(target.name)
    adv_cfg = run.cfg.adv_config()
    scorers = _defense_scorers(run, theta_i)
    rows = []
    for p in run.attack_paths():
        attack_data = run.domain(p, vocab)
        adv_path = run.need(run.artifact(f"adv_{p.stem}.tsv"), "run `xferlab attack` first")
        adv = AdversarialSet.load(adv_path, vocab, adv_cfg.epsilon, p.stem)
        if len(adv) == 0:
            raise click.ClickException(f"{adv_path} holds no adversarial examples")
        rep = attack_report(theta_i, run.model(p.stem), target, attack_data, adv_cfg, adv=adv)
        defended = {name: f(adv.sequences, adv.labels) for name, f in scorers.items()}
        rows.extend(report_rows(rep, defended))
        log.info("%s <- %s: after-attack %.3f (target on adv: %.3f)", target.name, p.stem,
                 rep.after_attack_acc, cross_domain_attack(theta_i, adv))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    w.writerows(rows)
    write_text_atomic(run.made(run.artifact("report.csv")), buf.getvalue())
    run.finish(defenses=list(scorers))


MD_HEADERS = ["target", "attack", "original", "intra-attack", "unperturbed", "after-attack",
              "shared vocab", "transfer loss", "defense", "after-defense"]


def markdown_table(rows: list[dict]) -> str:
    lines = ["| " + " | ".join(MD_HEADERS) + " |", "|" + "---|" * len(MD_HEADERS)]
    for r in rows:
        cells = [r[c] if r[c] else "-" for c in REPORT_COLUMNS]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


@main.command()
@step("report")
def report(run: Run):
    """Aggregate report CSVs into summary.csv, summary.md and summary.png."""
    from .plotting import accuracy_bars

    inputs = run.cfg.paths("report.inputs") or [run.artifact("report.csv")]
    rows = []
    for p in inputs:
        with open(run.need(p, "run `xferlab eval` first"), newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != REPORT_COLUMNS:
                raise click.ClickException(f"{p}: columns {reader.fieldnames} are not the report columns")
            rows.extend(reader)
    if not rows:
        raise click.ClickException("no report rows to aggregate")
    buf = io.StringIO()
    w = csv.DictWriter(buf, REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    write_text_atomic(run.made(run.artifact("summary.csv")), buf.getvalue())
    write_text_atomic(run.made(run.artifact("summary.md")), markdown_table(rows))
    accuracy_bars(rows, run.made(run.artifact("summary.png")))
    run.finish(rows=len(rows))


if __name__ == "__main__":
    main()
