import json
import subprocess
import sys

import numpy as np
import pytest

from robustdga import cli
from robustdga.classifier import Classifier
from robustdga.domain import is_valid_e2ld

TINY_TRAIN = ["--width", "8", "--epochs", "1"]
TINY_AT = ["--width", "8", "--epochs", "1", "--at-iterations", "1", "--cw-search-steps", "1",
           "--beam-width", "1", "--steps-per-epoch", "1"]
TINY_EVAL = ["--samples", "8", "--iterations", "2", "--flips", "1", "--beam-width", "2"]


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["dataset", "synth", "--out", str(root / "data"),
                     "--n-benign", "600", "--n-malicious", "600"]) == 0
    assert cli.main(["train", "--data", str(root / "data"), "--out", str(root / "m.dgaf")]
                    + TINY_TRAIN) == 0
    (root / "in.txt").write_text("qxzvbnmlkj\nexample\nnot valid!\nwkdjfhgqpz\n")
    return root


def test_train_without_data_is_usage_error(capsys):
    assert cli.main(["train", "--out", "x.dgaf"]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "--data" in err


def test_unknown_subcommand_and_flag(capsys):
    assert cli.main(["bogus"]) == 1
    assert cli.main(["train", "--nope"]) == 1
    assert cli.main([]) == 1
    assert cli.main(["--help"]) == 0


def test_missing_file_is_data_error(tmp_path):
    code = cli.main(["attack", "--kind", "length", "--in", str(tmp_path / "none.txt"),
                     "--model", str(tmp_path / "none.dgaf"), "--out", str(tmp_path / "r.json")])
    assert code == 2


def test_dataset_build_and_manifest(tmp_path):
    (tmp_path / "b.txt").write_text("www.google.com\nexample.co.uk\nwiki.org\n")
    (tmp_path / "m.csv").write_text("family,domain,first_seen\nfa,qwkejrh.com,2016-01-01\n"
                                    "fb,zzxcvb.net,2019-01-01\nbroken\n")
    (tmp_path / "psl.dat").write_text("com\norg\nnet\nuk\nco.uk\n")
    args = ["dataset", "build", "--benign", str(tmp_path / "b.txt"), "--malicious",
            str(tmp_path / "m.csv"), "--cutoff", "2017-01-01", "--k", "2",
            "--suffix-list", str(tmp_path / "psl.dat")]
    assert cli.main(args + ["--out", str(tmp_path / "d")]) == 0
    man = json.loads((tmp_path / "d/manifest.json").read_text())
    assert man["cutoff"] == "2017-01-01" and man["cap"] == 2350 and man["seed"] == 0
    assert "records.csv" in man["files"] and man["report"]["holdout"] == 1
    assert cli.main(args[:-2] + ["--out", str(tmp_path / "e")]) == 1  # no suffix source


def test_config_file_defaults_and_override(work, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# attack run\nkind = length\nmodel = {work / 'm.dgaf'}\n"
                   f"in = {work / 'in.txt'}\n")
    # the config key is the destination name, so --in is spelled input
    assert cli.main(["--config", str(cfg), "attack", "--out", str(tmp_path / "r.json")]) == 1
    cfg.write_text(f"kind = length\nmodel = {work / 'm.dgaf'}\ninput = {work / 'in.txt'}\n"
                   "iterations = 3\n")
    args = cli.parse_args(["--config", str(cfg), "attack", "--kind", "hyphen",
                           "--out", str(tmp_path / "r.json")])
    assert args.kind == "hyphen" and args.iterations == 3
    assert cli.main(["--config", str(cfg), "attack", "--out", str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["attack_id"] == "length"


@pytest.mark.parametrize("kind", ["hotflip", "maskdga", "hyphen", "length"])
def test_string_attacks(work, tmp_path, kind):
    out = tmp_path / f"{kind}.json"
    assert cli.main(["attack", "--kind", kind, "--in", str(work / "in.txt"), "--model",
                     str(work / "m.dgaf"), "--out", str(out), "--flips", "2"]) == 0
    rep = json.loads(out.read_text())
    assert rep["attack_id"] == kind and rep["sample_count"] == 3
    man = json.loads((tmp_path / f"{kind}.json.manifest.json").read_text())
    assert man["seed"] == 0 and len(man["config_hash"]) == 64 and "numpy" in man["versions"]


def test_replay(work, tmp_path):
    out = tmp_path / "replay.json"
    assert cli.main(["attack", "--kind", "replay", "--in", str(work / "in.txt"), "--model",
                     str(work / "m.dgaf"), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["sample_count"] == 3


def test_embedding_attack_then_discretize(work, tmp_path):
    base = ["attack", "--kind", "pgd_linf", "--in", str(work / "in.txt"), "--model",
            str(work / "m.dgaf"), "--iterations", "3"]
    assert cli.main(base + ["--out", str(tmp_path / "a.json")]) == 1  # nothing to emit
    assert cli.main(base + ["--out", str(tmp_path / "a.json"), "--discretizer", "lbf_l2",
                            "--domains-out", str(tmp_path / "adv.txt"),
                            "--embeddings-out", str(tmp_path / "v.dgaf")]) == 0
    assert json.loads((tmp_path / "a.json").read_text())["attack_id"] == "pgd_linf+lbf_l2"
    assert cli.main(["discretize", "--in", str(tmp_path / "v.dgaf"), "--model",
                     str(work / "m.dgaf"), "--discretizer", "lbf_l2",
                     "--out", str(tmp_path / "d.txt")]) == 0
    # the saved v_adv batch is float32, which the model also uses
    assert (tmp_path / "d.txt").read_text() == (tmp_path / "adv.txt").read_text()
    assert all(is_valid_e2ld(s) for s in (tmp_path / "d.txt").read_text().split())


def test_attack_is_byte_reproducible(work, tmp_path):
    outs, hashes = [], []
    for run in ("a", "a", "b"):
        path = tmp_path / run / "r.json"
        assert cli.main(["--seed", "3", "attack", "--kind", "bat_l2", "--in", str(work / "in.txt"),
                         "--model", str(work / "m.dgaf"), "--iterations", "3",
                         "--discretizer", "lco_cosine", "--out", str(path),
                         "--domains-out", str(tmp_path / run / "adv.txt")]) == 0
        man = (tmp_path / run / "r.json.manifest.json").read_bytes()
        outs.append((path.read_bytes(), (tmp_path / run / "adv.txt").read_bytes(), man))
        hashes.append(json.loads(man)["config_hash"])
    assert outs[0] == outs[1]
    assert outs[0][:2] == outs[2][:2] and len(set(hashes)) == 1


def test_harden_writes_model_and_batch_manifests(work, tmp_path):
    out = tmp_path / "h.dgaf"
    assert cli.main(["harden", "--data", str(work / "data"), "--scheme", "discrete",
                     "--init-model", str(work / "m.dgaf"), "--out", str(out),
                     "--batch-manifests", str(tmp_path / "batches.jsonl")] + TINY_AT) == 0
    lines = (tmp_path / "batches.jsonl").read_text().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["kind"] == "discrete"
    m = Classifier.load(out)
    assert not np.array_equal(m.params["head.weight"], Classifier.load(work / "m.dgaf").params["head.weight"])


def test_eval_writes_reports_and_matrix(work, tmp_path):
    out = tmp_path / "ev"
    assert cli.main(["eval", "--data", str(work / "data"), "--model", str(work / "m.dgaf"),
                     "--out-dir", str(out), "--attacks", "maskdga,hyphen,pgd_l2+lco_l2"]
                    + TINY_EVAL) == 0
    rep = json.loads((out / "m.json").read_text())
    assert sorted(rep["reports"]) == ["hyphen", "maskdga", "pgd_l2+lco_l2"]
    assert rep["clean"]["count"] > 0 and rep["reports"]["maskdga"]["sample_count"] == 8
    assert (out / "matrix.csv").read_text().splitlines()[0] == "attack,m"
    fam = json.loads((out / "m.per_family.json").read_text())
    assert len(fam["families"]) == 4
    assert cli.main(["eval", "--data", str(work / "data"), "--model", str(work / "m.dgaf"),
                     "--out-dir", str(out), "--attacks", "fgsm"]) == 1


def test_logo_flags_held_out_rows(work, tmp_path):
    out = tmp_path / "logo"
    assert cli.main(["logo", "--group", "hotflip", "--data", str(work / "data"),
                     "--init-model", str(work / "m.dgaf"), "--out-dir", str(out),
                     "--attacks", "hotflip,maskdga"] + TINY_AT + ["--samples", "6", "--flips", "1"]) == 0
    assert (out / "logo_hotflip.dgaf").exists()
    rows = dict(line.split(",") for line in (out / "matrix.csv").read_text().splitlines()[1:])
    assert rows["hotflip"].endswith("*") and not rows["maskdga"].endswith("*")
    assert json.loads((out / "matrix.json").read_text())["held_out"] == {"logo_hotflip": ["hotflip"]}


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "robustdga.cli", "train"],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "usage:" in proc.stderr and proc.stdout == ""
