import csv
import json

import pytest

from edlkit.cli import main

SMALL = {"data": {"n_per_class": 30, "dim": 4, "n_ood": 40, "noise_sigmas": [0.1]},
         "model": {"hidden": [8]}, "epochs": 3, "seeds": [0]}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL))
    return path


def read_csv_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestUsage:
    def test_no_command(self, capsys):
        assert main([]) == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self):
        assert main(["sweep", "--bogus"]) == 2

    def test_bad_config_field(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"loss": {"lambda": -1}}))
        assert main(["sweep", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
        assert "loss.lambda" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["sweep", "--config", str(tmp_path / "none.json")]) == 2

    def test_bad_lambda_range(self, config, tmp_path):
        assert main(["sweep", "--config", str(config), "--lambda", "1:0:2", "--out", str(tmp_path / "o")]) == 2


@pytest.mark.slow
class TestSelftest:
    def test_passes(self, tmp_path):
        out = tmp_path / "st"
        assert main(["selftest", "--out", str(out)]) == 0
        rows = read_csv_rows(out / "selftest.csv")
        assert rows and all(r["passed"] == "true" for r in rows)
        assert json.loads((out / "summary.json").read_text())["passed"] is True
        assert not (out / ".partial").exists()


class TestPipeline:
    def test_gen_train_eval_curves(self, config, tmp_path, capsys):
        data = tmp_path / "data"
        assert main(["gen-data", "--config", str(config), "--out", str(data)]) == 0
        assert {"train.csv", "val.csv", "test.csv", "ood_val.csv", "ood_test.csv", "noisy_0.1.csv"} <= {
            p.name for p in data.iterdir()
        }

        model = tmp_path / "model"
        assert main(["train", "--config", str(config), "--data", str(data), "--out", str(model),
                     "--lambda", "0.5"]) == 0
        ckpt = model / "model.ckpt"
        assert ckpt.exists()
        assert len(read_csv_rows(model / "epoch_log.csv")) == 3

        ev = tmp_path / "eval"
        capsys.readouterr()
        assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data), "--config", str(config),
                     "--out", str(ev)]) == 0
        printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert 0.0 <= printed["accuracy"] <= 1.0
        metrics = json.loads((ev / "metrics.json").read_text())
        assert "ood_auroc_um" in metrics and "noisy_acc_0.1" in metrics

        cv = tmp_path / "curves"
        assert main(["curves", "--checkpoint", str(ckpt), "--data", str(data), "--config", str(config),
                     "--measure", "um", "--measure", "mp", "--out", str(cv)]) == 0
        for name in ("roc_um.csv", "pr_um.csv", "roc_mp.csv", "pr_mp.csv"):
            assert (cv / name).exists()
        roc = list(csv.reader(open(cv / "roc_um.csv")))
        assert roc[0] == ["threshold", "fpr", "tpr"]
        assert [float(v) for v in roc[-1][1:]] == [1.0, 1.0]

    def test_train_tuned_lambda(self, config, tmp_path):
        out = tmp_path / "m"
        assert main(["train", "--config", str(config), "--lambda", "tuned", "--out", str(out)]) == 0
        lam = json.loads((out / "manifest.json").read_text())["lambda_used"]
        assert lam in [round(0.1 * k, 1) for k in range(1, 11)]

    def test_train_tuned_rejects_softmax(self, config, tmp_path):
        assert main(["train", "--config", str(config), "--form", "softmax_ce", "--lambda", "tuned",
                     "--out", str(tmp_path / "m")]) == 2

    def test_eval_rejects_foreign_checkpoint(self, tmp_path):
        bad = tmp_path / "x.ckpt"
        bad.write_bytes(b"junk")
        assert main(["eval", "--checkpoint", str(bad), "--out", str(tmp_path / "e")]) == 2


class TestSweep:
    def test_lambda_range_gives_ten_cells(self, config, tmp_path):
        out = tmp_path / "sw"
        assert main(["sweep", "--config", str(config), "--lambda", "0.1:0.1:1.0", "--epochs", "1",
                     "--out", str(out)]) == 0
        rows = read_csv_rows(out / "results.csv")
        assert len(rows) == 10
        assert [r["lambda"] for r in rows] == ["0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1"]
        assert all(r["format_version"] == "1" for r in rows)
        assert (out / "curve_roc_cell09.csv").exists()
        assert json.loads((out / "manifest.json").read_text())["cells"] == 10

    def test_ablation_flag(self, config, tmp_path):
        out = tmp_path / "ab"
        assert main(["sweep", "--config", str(config), "--ablation", "--epochs", "1", "--out", str(out)]) == 0
        assert len(read_csv_rows(out / "results.csv")) == 8

    def test_seed_override_and_default_root(self, config, tmp_path, monkeypatch):
        monkeypatch.setenv("EDLKIT_OUTPUT_ROOT", str(tmp_path / "root"))
        assert main(["sweep", "--config", str(config), "--seeds", "3,4", "--epochs", "1"]) == 0
        (run,) = (tmp_path / "root").iterdir()
        assert run.name.startswith("sweep-")
        assert {r["seed"] for r in read_csv_rows(run / "per_seed.csv")} == {"3", "4"}
