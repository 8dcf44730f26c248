import csv
import hashlib
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from xferlab.cli import main
from xferlab.config import ConfigError, ExperimentConfig

PIPELINE_CFG = """\
seed = 0
out = out
synth.domains = target:1.0, att070:0.7
synth.examples_per_class = 120
data.target = out/target.tsv
data.attack = out/att070.tsv
pset.T = 3
pset.R = 6
train.epochs_meta = 50
"""


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


def config(tmp_path, text=PIPELINE_CFG, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run_pipeline(cfg, defenses=("l2w",)):
    steps = [["synth"], ["train", "--domain", "target"], ["train", "--domain", "att070"], ["attack"],
             ["gen-psets"]] + [["defend", "--defense", d] for d in defenses] + [["eval"], ["report"]]
    for step in steps:
        res = invoke(*step, "--config", cfg)
        assert res.exit_code == 0, f"{step}: {res.output}"


def digest(paths):
    return {p: hashlib.sha256(Path(p).read_bytes()).hexdigest() for p in paths}


def test_config_defaults_and_overrides(tmp_path):
    cfg = ExperimentConfig.load(config(tmp_path, "seed = 4\nseed.attack = 9\n"), {"out": None})
    assert cfg.seed_for("split") == 4 and cfg.seed_for("attack") == 9
    assert cfg.out_dir == tmp_path / "out"
    assert cfg.pset_config().T == 10 and cfg.pset_config().d_max == 0.1
    assert cfg.digest() == ExperimentConfig.load(tmp_path / "exp.cfg").digest()


@pytest.mark.parametrize("text, field", [("attack.epsilon = 1.5", "attack.epsilon"),
                                         ("pset.T = 0", "pset.T"),
                                         ("train.lr = -1", "train.lr"),
                                         ("model.arch = lstm", "model.arch"),
                                         ("model.d = two", "model.d"),
                                         ("bogus.key = 1", "bogus.key")])
def test_config_errors_name_the_field(tmp_path, text, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        ExperimentConfig.load(config(tmp_path, text + "\n"))
    res = invoke("synth", "--config", tmp_path / "exp.cfg")
    assert res.exit_code != 0 and field in res.output


def test_synth_writes_400_line_corpus(tmp_path):
    cfg = config(tmp_path, "synth.domains = t:1.0\nsynth.examples_per_class = 200\n")
    res = invoke("synth", "--config", cfg)
    assert res.exit_code == 0
    assert len((tmp_path / "out" / "t.tsv").read_text().splitlines()) == 400


def test_missing_prerequisite_names_file(tmp_path):
    cfg = config(tmp_path)
    assert invoke("synth", "--config", cfg).exit_code == 0
    res = invoke("attack", "--config", cfg)
    assert res.exit_code != 0 and "vocab.txt" in res.output


def test_defend_l2w_without_bundle_names_it(tmp_path):
    cfg = config(tmp_path)
    for step in (["synth"], ["train"]):
        assert invoke(*step, "--config", cfg).exit_code == 0
    res = invoke("defend", "--defense", "l2w", "--config", cfg)
    assert res.exit_code != 0
    assert str(tmp_path / "out" / "psets" / "manifest.json") in res.output


@pytest.mark.slow
def test_full_pipeline(tmp_path):
    cfg = config(tmp_path)
    run_pipeline(cfg, defenses=("advtrain", "l2w"))
    out = tmp_path / "out"
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert [(r["attack_domain"], r["defense"]) for r in rows] == [("att070", "advtrain"), ("att070", "l2w")]
    assert (out / "summary.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    md = (out / "summary.md").read_text().splitlines()
    assert len(md) == 2 + len(rows)
    man = json.loads((out / "manifest_eval.json").read_text())
    assert man["config_hash"] == ExperimentConfig.load(cfg).digest()
    assert man["seeds"] == {"global": 0, "split": 0, "attack": 0, "pset": 0}
    assert str(out / "report.csv") in man["outputs"]


@pytest.mark.slow
def test_steps_do_not_touch_their_inputs(tmp_path):
    cfg = config(tmp_path)
    run_pipeline(cfg)
    out = tmp_path / "out"
    inputs = [cfg, out / "target.tsv", out / "att070.tsv", out / "vocab.txt", out / "model_target.params",
              out / "adv_att070.tsv", out / "psets" / "manifest.json", out / "defense_l2w.meta"]
    before = digest(inputs)
    for step in (["attack"], ["eval"], ["report"], ["defend", "--defense", "distill"]):
        assert invoke(*step, "--config", cfg).exit_code == 0
    assert digest(inputs) == before


def test_report_emits_one_row_per_target_attack_defense(tmp_path):
    head = ",".join(["target_domain", "attack_domain", "original_acc", "intra_attack_acc", "unperturbed_acc",
                     "after_attack_acc", "shared_vocab", "transfer_loss", "defense", "after_defense_acc"])
    a = tmp_path / "a.csv"
    a.write_text(head + "\n" + "\n".join(
        f"magazine,baby,0.8,0.1,0.75,0.381,0.5,0.05,{d},{v}"
        for d, v in (("advtrain", 0.639), ("ps-advtrain", 0.608), ("l2w", 0.796))) + "\n")
    b = tmp_path / "b.csv"
    b.write_text(head + "\nbook,magazine,0.8,0.1,0.76,0.398,0.5,0.04,l2w,0.7\n")
    cfg = config(tmp_path, f"report.inputs = {a.name}, {b.name}\n")
    res = invoke("report", "--config", cfg)
    assert res.exit_code == 0, res.output
    rows = list(csv.DictReader(open(tmp_path / "out" / "summary.csv")))
    assert [(r["target_domain"], r["attack_domain"], r["defense"]) for r in rows] == [
        ("magazine", "baby", "advtrain"), ("magazine", "baby", "ps-advtrain"), ("magazine", "baby", "l2w"),
        ("book", "magazine", "l2w")]
    assert (tmp_path / "out" / "summary.png").exists()


def test_report_rejects_foreign_csv(tmp_path):
    (tmp_path / "x.csv").write_text("a,b\n1,2\n")
    res = invoke("report", "--config", config(tmp_path, "report.inputs = x.csv\n"))
    assert res.exit_code != 0 and "x.csv" in res.output


def test_seed_and_out_flags(tmp_path):
    cfg = config(tmp_path, "synth.domains = t:1.0\nsynth.examples_per_class = 5\n")
    res = invoke("synth", "--config", cfg, "--seed", 3, "--out", tmp_path / "elsewhere")
    assert res.exit_code == 0
    man = json.loads((tmp_path / "elsewhere" / "manifest_synth.json").read_text())
    assert man["seeds"]["global"] == 3
