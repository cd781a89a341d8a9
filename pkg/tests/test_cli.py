import csv
import json

import pytest

from ecol.cli import main
from ecol.synthetic import fixture_path, synthetic_posts, write_constraint_csv


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    write_constraint_csv(synthetic_posts(60, seed=10, split="train"), d / "train.csv")
    write_constraint_csv(synthetic_posts(30, seed=11, split="dev"), d / "dev.csv")
    return d


def _assets():
    return ["--reliability", str(fixture_path("reliability")),
            "--descriptions", str(fixture_path("descriptions")),
            "--unshorten-cache", str(fixture_path("unshorten_cache"))]


@pytest.fixture(scope="module")
def trained(workdir):
    assert main(["build-index", str(fixture_path("corpus")), str(workdir / "index")]) == 0
    assert main(["init-encoder", str(workdir / "enc"), "--texts", str(workdir / "train.csv"),
                 "--kind", "bag", "--vocab-size", "800", "--seed", "0"]) == 0
    assert main(["train", "--train", str(workdir / "train.csv"), "--encoder", str(workdir / "enc"),
                 "--output", str(workdir / "models"), "--variant", "C_PK_S", "--seeds", "42,0",
                 "--epochs", "1", "--lr", "1e-3", "--index", str(workdir / "index"), *_assets()]) == 0
    return workdir


def test_preprocess(workdir, capsys):
    out = workdir / "pre.csv"
    assert main(["preprocess", str(workdir / "dev.csv"), str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 30 and "<URL>" not in rows[0]["urls"]
    assert "preprocessed 30 posts" in capsys.readouterr().out


def test_build_index_output(workdir, capsys):
    assert main(["build-index", str(fixture_path("corpus")), str(workdir / "idx2")]) == 0
    out = capsys.readouterr().out
    assert "indexed 40 documents" in out and "manifest sha256" in out


def test_train_writes_manifests(trained):
    for seed in (42, 0):
        manifest = json.loads((trained / "models" / f"C_PK_S_seed{seed}" / "manifest.json").read_text())
        assert manifest["seed"] == seed and manifest["dim"] == 4629
        assert manifest["dataset"]["size"] == 60 and manifest["assets"]["index"]


def test_predict_and_ensemble_reproducible(trained):
    models = [str(trained / "models" / "C_PK_S_seed42"), str(trained / "models" / "C_PK_S_seed0")]
    for name in ("a.csv", "b.csv"):
        assert main(["predict", "--models", *models, "--split", str(trained / "dev.csv"),
                     "--output", str(trained / name)]) == 0
    a, b = (trained / "a.csv").read_bytes(), (trained / "b.csv").read_bytes()
    assert a == b
    rows = list(csv.DictReader(open(trained / "a.csv")))
    assert len(rows) == 30
    assert all(abs(float(r["prob_fake"]) + float(r["prob_real"]) - 1) < 1e-6 for r in rows)


def test_evaluate_report(trained):
    report = trained / "report.json"
    assert main(["evaluate", "--models", str(trained / "models" / "C_PK_S_seed42"),
                 "--split", str(trained / "dev.csv"), "--report", str(report)]) == 0
    payload = json.loads(report.read_text())
    assert payload["variant"] == "C_PK_S" and not payload["ensemble"]
    assert set(payload["link_breakdown"]["f1"]) == {
        "fake_with_links", "fake_without_links", "real_with_links", "real_without_links"}
    assert 0 <= payload["metrics"]["weighted"]["f1"] <= 100


def test_config_file_wins(trained, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"variant": "C", "seeds": "5", "epochs": 1}))
    with pytest.warns(UserWarning, match="overrides"):
        rc = main(["train", "--config", str(cfg), "--variant", "C_S", "--train", str(trained / "train.csv"),
                   "--encoder", str(trained / "enc"), "--output", str(tmp_path / "m")])
    assert rc == 0
    assert (tmp_path / "m" / "C_seed5" / "manifest.json").exists()


def test_missing_input_is_usage_error(tmp_path, capsys):
    assert main(["preprocess", str(tmp_path / "nope.csv"), str(tmp_path / "o.csv")]) == 2
    assert "not found" in capsys.readouterr().err


def test_missing_asset_is_usage_error(trained, tmp_path):
    rc = main(["train", "--train", str(trained / "train.csv"), "--encoder", str(trained / "enc"),
               "--output", str(tmp_path / "m"), "--variant", "C_PK", "--seeds", "1"])
    assert rc == 2


def test_malformed_split_is_data_error(tmp_path, trained):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,tweet,label\n1,x,unknown\n")
    assert main(["evaluate", "--models", str(trained / "models" / "C_PK_S_seed42"), "--split", str(bad),
                 "--report", str(tmp_path / "r.json")]) == 2


def test_bad_model_dir(tmp_path, trained):
    assert main(["predict", "--models", str(tmp_path), "--split", str(trained / "dev.csv"),
                 "--output", str(tmp_path / "p.csv")]) == 2


def test_argparse_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2


def test_cache_root_env(monkeypatch, tmp_path):
    from ecol.cli import cache_root

    monkeypatch.setenv("ECOL_CACHE_DIR", str(tmp_path))
    assert cache_root() == tmp_path
