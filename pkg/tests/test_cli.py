import json
import shutil

import pytest

from interpnet.cli import format_table, load_run_config, main
from interpnet.dataset import load_dataset
from interpnet.model import ConfigError

FAST = """
model: {hidden_width: 8, embed_dim: 8, lstm_hidden_dim: 8, max_decode_len: 12}
train: {classifier_epochs: 3, explainer_epochs: 3, patience: 1}
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(root / "toy.jsonl")]) == 0
    (root / "fast.yaml").write_text(f"data: {root / 'toy.jsonl'}\n" + FAST)
    return root


@pytest.fixture(scope="module")
def trained(workdir):
    """Default-size model on the toy data; the CLI's documented happy path."""
    out = workdir / "run"
    assert main(["train", "--data", str(workdir / "toy.jsonl"), "--out", str(out), "--seed", "0"]) == 0
    return out


# --------------------------------------------------------------------------
# gen-data
# --------------------------------------------------------------------------

def test_gen_data_default(workdir, capsys):
    assert main(["gen-data", "--out", str(workdir / "again.jsonl")]) == 0
    assert "200 records" in capsys.readouterr().out
    assert len(load_dataset(workdir / "again.jsonl")) == 200
    assert (workdir / "again.jsonl").read_bytes() == (workdir / "toy.jsonl").read_bytes()


def test_gen_data_seed_matters(workdir):
    assert main(["gen-data", "--out", str(workdir / "s1.jsonl"), "--seed", "1"]) == 0
    assert (workdir / "s1.jsonl").read_bytes() != (workdir / "toy.jsonl").read_bytes()


@pytest.mark.parametrize("flags", [["--noise-std", "-1"], ["--num-classes", "0"], ["--num-classes", "20"]])
def test_gen_data_invalid_spec(workdir, flags, capsys):
    assert main(["gen-data", "--out", str(workdir / "bad.jsonl"), *flags]) == 2
    assert "error:" in capsys.readouterr().err
    assert not (workdir / "bad.jsonl").exists()


# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------

def test_flags_override_config(workdir):
    cfg = load_run_config(str(workdir / "fast.yaml"), {"seed": 5, "variant": "interpnet2", "out": None})
    assert cfg.seed == 5 and cfg.train.seed == 5 and cfg.variant == "interpnet2"
    assert cfg.model.hidden_width == 8 and cfg.train.classifier_epochs == 3
    assert "variant" in cfg.given and "out" not in cfg.given


@pytest.mark.parametrize("text", ["bogus: 1\n", "train: {epochs: 3}\n", "model: 3\n", "- a\n",
                                  "train: {patience: 200}\n", "seed: abc\n"])
def test_bad_config_rejected(tmp_path, text):
    (tmp_path / "c.yaml").write_text(text)
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "c.yaml"), {})


def test_bad_config_exits_2(workdir, tmp_path):
    (tmp_path / "c.yaml").write_text("bogus: 1\n")
    assert main(["train", "--config", str(tmp_path / "c.yaml"), "--data", str(workdir / "toy.jsonl")]) == 2


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def test_train_writes_artifacts(trained):
    for name in ("model.json", "train_log.jsonl", "training_curves.png"):
        assert (trained / name).is_file(), name
    phases = [json.loads(line)["phase"] for line in (trained / "train_log.jsonl").read_text().splitlines()]
    k = phases.index("explainer")
    assert set(phases[:k]) == {"classifier"} and set(phases[k:]) == {"explainer"}


def test_train_missing_dataset(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path)]) == 2
    assert "does not exist" in capsys.readouterr().err


def test_train_without_data(tmp_path):
    assert main(["train", "--out", str(tmp_path)]) == 2


def test_train_unknown_variant_is_usage_error(workdir):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--data", str(workdir / "toy.jsonl"), "--variant", "interpnet9"])
    assert exc.value.code == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exits_3(workdir, tmp_path):
    (tmp_path / "c.yaml").write_text(FAST.replace("patience: 1}", "patience: 1, classifier_lr: 1.0e+300}"))
    code = main(["train", "--config", str(tmp_path / "c.yaml"), "--data", str(workdir / "toy.jsonl"),
                 "--out", str(tmp_path / "o")])
    assert code == 3


def test_train_is_byte_deterministic(workdir, tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--config", str(workdir / "fast.yaml"), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "model.json").read_bytes() == (tmp_path / "b" / "model.json").read_bytes()


def test_malformed_dataset_exits_2(tmp_path, capsys):
    (tmp_path / "d.jsonl").write_text('{"format": "interpnet-dataset", "version": 1}\n{"id": 1\n')
    assert main(["train", "--data", str(tmp_path / "d.jsonl"), "--out", str(tmp_path / "o")]) == 2
    assert "d.jsonl:2" in capsys.readouterr().err


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------

def test_evaluate_report(trained, capsys):
    assert main(["evaluate", "--checkpoint", str(trained / "model.json"), "--out", str(trained)]) == 0
    summary = json.loads(capsys.readouterr().out)
    report = json.loads((trained / "report.json").read_text())
    for key in ("bleu", "meteor_lite", "cider", "accuracy"):
        assert report[key] is not None and summary[key] == report[key]
    assert report["num_examples"] == 30
    assert (trained / "report.tsv").read_text().startswith("bleu\tmeteor_lite\tcider\taccuracy\n")
    assert (trained / "report.png").stat().st_size > 0


def test_evaluate_is_deterministic(trained, tmp_path):
    for name in ("a", "b"):
        assert main(["evaluate", "--checkpoint", str(trained / "model.json"), "--out", str(tmp_path / name)]) == 0
    for f in ("report.json", "report.tsv", "report.png"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_evaluate_beam_width(trained, tmp_path):
    assert main(["evaluate", "--checkpoint", str(trained / "model.json"), "--out", str(tmp_path),
                 "--beam-width", "3"]) == 0
    assert json.loads((tmp_path / "report.json").read_text())["bleu"] >= 60


def test_evaluate_variant_mismatch(trained, tmp_path, capsys):
    assert main(["evaluate", "--checkpoint", str(trained / "model.json"), "--out", str(tmp_path),
                 "--variant", "interpnet2"]) == 2
    assert "interpnet1" in capsys.readouterr().err


def test_evaluate_feature_dimension_mismatch(trained, workdir, tmp_path):
    assert main(["gen-data", "--out", str(tmp_path / "wide.jsonl"), "--feature-dim", "9"]) == 0
    assert main(["evaluate", "--checkpoint", str(trained / "model.json"), "--data", str(tmp_path / "wide.jsonl"),
                 "--out", str(tmp_path)]) == 2


def test_evaluate_missing_checkpoint(tmp_path):
    assert main(["evaluate", "--checkpoint", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2


def test_sweep_train_and_evaluate(workdir, tmp_path, capsys):
    out = tmp_path / "sweep"
    assert main(["train", "--config", str(workdir / "fast.yaml"), "--out", str(out), "--sweep"]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--config", str(workdir / "fast.yaml"), "--out", str(out), "--sweep"]) == 0
    table = capsys.readouterr().out
    assert table == (out / "sweep.txt").read_text()
    assert table.splitlines()[0].split() == ["METEOR-lite", "BLEU", "CIDEr", "Classification", "Accuracy"]
    assert len(table.splitlines()) == 6
    rows = (out / "sweep.tsv").read_text().splitlines()
    assert [r.split("\t")[0] for r in rows[1:]] == ["interpnet0", "interpnet1", "interpnet2", "interpnet3",
                                                    "captioning"]
    for v in ("interpnet0", "captioning"):
        assert (out / v / "report.json").is_file()
    assert (out / "sweep.png").is_file()
    shutil.rmtree(out / "interpnet2")
    assert main(["evaluate", "--config", str(workdir / "fast.yaml"), "--out", str(out), "--sweep"]) == 2


def test_format_table_layout():
    rows = [("interpnet2", {"meteor_lite": 37.91, "bleu": 62.34, "cider": 8.21, "accuracy": 0.815})]
    lines = format_table(rows).splitlines()
    assert lines[1].split("  ")[0] == "InterpNET_2 (2 hidden layers)"
    assert lines[1].split()[-4:] == ["37.9", "62.3", "82.1", "81.5%"]


# --------------------------------------------------------------------------
# explain
# --------------------------------------------------------------------------

def test_explain_prints_class_template(trained, workdir, capsys):
    records = {r.id: r for r in load_dataset(workdir / "toy.jsonl")}
    for rid in ("c000-0001", "c003-0007"):
        assert main(["explain", "--checkpoint", str(trained / "model.json"),
                     "--dataset", str(workdir / "toy.jsonl"), "--id", rid]) == 0
        line = capsys.readouterr().out.strip()
        k, p, text = line.split(" ", 2)
        assert k == f"class={records[rid].label}"
        assert p.startswith("p=") and 0 <= float(p[2:]) <= 1 and len(p) == len("p=0.000000")
        assert text == "explanation=" + records[rid].explanations[0]


def test_explain_from_feature_file_is_stable(trained, workdir, tmp_path, capsys):
    rec = load_dataset(workdir / "toy.jsonl")[42]
    (tmp_path / "x.json").write_text(json.dumps(list(rec.features)))
    (tmp_path / "x.txt").write_text(" ".join(repr(float(v)) for v in rec.features))
    outs = []
    for f in ("x.json", "x.txt", "x.json"):
        assert main(["explain", "--checkpoint", str(trained / "model.json"), "--features", str(tmp_path / f)]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1] == outs[2]
    assert outs[0].startswith(f"class={rec.label} p=")


@pytest.mark.parametrize("content", ["[1, 2, oops]", "1 2 x", "", "[[1, 2]]", "[1, NaN]", "1 2 3"])
def test_explain_malformed_features(trained, tmp_path, content):
    (tmp_path / "x.txt").write_text(content)
    assert main(["explain", "--checkpoint", str(trained / "model.json"), "--features", str(tmp_path / "x.txt")]) == 2


def test_explain_needs_input(trained, workdir):
    assert main(["explain", "--checkpoint", str(trained / "model.json")]) == 2
    assert main(["explain", "--checkpoint", str(trained / "model.json"),
                 "--dataset", str(workdir / "toy.jsonl"), "--id", "nope"]) == 2
