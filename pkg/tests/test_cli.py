import csv
import hashlib
import json
from pathlib import Path

import pytest

from hrqvae.cli import build_parser, main
from hrqvae.serialization import load_arrays

FIXTURES = Path(__file__).parent / "fixtures"

SMALL_DATA = [
    "--n-samples", "120", "--n-eval", "20", "--n-contents", "4", "--dim-out", "6",
    "--hier-levels", "2", "--hier-branching", "3", "--hier-dim", "4", "--hier-scales", "4,1",
]
SMALL_MODEL = [
    "--depth", "2", "--codes", "4", "--sem-dim", "3", "--syn-dim", "5", "--hidden", "8",
    "--head-hidden", "8", "--batch-size", "16", "--steps", "10",
]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    assert run("gen-data", "--out", out, "--seed", 3, *SMALL_DATA) == 0
    return out


class TestGenData:
    def test_files_and_manifest(self, data_dir):
        manifest = json.loads((data_dir / "manifest.json").read_text())
        assert sorted(manifest["files"]) == ["eval.json", "train.json"]
        for name, digest in manifest["files"].items():
            assert hashlib.sha256((data_dir / name).read_bytes()).hexdigest() == digest
        assert manifest["settings"]["hier.scales"] == [4.0, 1.0]
        _, arrays, _ = load_arrays(data_dir / "eval.json", "triples")
        assert arrays["y"].shape == (20, 6)

    def test_deterministic(self, data_dir, tmp_path):
        again = tmp_path / "again"
        run("gen-data", "--out", again, "--seed", 3, *SMALL_DATA)
        for name in ("train.json", "eval.json", "manifest.json"):
            assert (again / name).read_bytes() == (data_dir / name).read_bytes()

    def test_mixture(self, tmp_path):
        assert run("gen-data", "--out", tmp_path, "--kind", "mixture", "--n-samples", 50) == 0
        _, arrays, _ = load_arrays(tmp_path / "vectors.json", "vectors")
        assert arrays["vectors"].shape == (50, 16) and "labels_l3" in arrays

    def test_config_file_and_env(self, tmp_path, monkeypatch):
        cfg = tmp_path / "data.cfg"
        cfg.write_text("n_samples = 40\nn_eval = 10  # small\n")
        monkeypatch.setenv("HRQ_DIM_OUT", "5")
        assert run("gen-data", "--config", cfg, "--out", tmp_path / "d") == 0
        _, arrays, _ = load_arrays(tmp_path / "d" / "train.json")
        assert arrays["y"].shape == (30, 5)

    def test_empty_dataset(self, tmp_path, capsys):
        assert run("gen-data", "--out", tmp_path, "--n-samples", 0) == 2
        assert "n_samples" in capsys.readouterr().err

    def test_bad_value(self, tmp_path):
        assert run("gen-data", "--out", tmp_path, "--n-samples", "many") == 2

    def test_bad_config_line(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("n_samples 40\n")
        assert run("gen-data", "--config", cfg, "--out", tmp_path) == 2
        assert "bad.cfg:1" in capsys.readouterr().err


class TestTrain:
    def test_outputs(self, data_dir, tmp_path):
        out = tmp_path / "run"
        assert run("train", "--data", data_dir, "--out", out, *SMALL_MODEL) == 0
        rows = list(csv.DictReader((out / "history.csv").open()))
        assert len(rows) == 10 and list(rows[0]) == ["step", "recon", "kl", "code_pred", "tau"]
        assert float(rows[0]["tau"]) == 2.0

    def test_resume_is_exact(self, data_dir, tmp_path):
        run("train", "--data", data_dir, "--out", tmp_path / "full", *SMALL_MODEL)
        run("train", "--data", data_dir, "--out", tmp_path / "a", "--stop-at", 4, *SMALL_MODEL)
        assert run("train", "--data", data_dir, "--out", tmp_path / "b", "--resume", tmp_path / "a" / "checkpoint.json") == 0
        full = (tmp_path / "full" / "checkpoint.json").read_bytes()
        assert (tmp_path / "b" / "checkpoint.json").read_bytes() == full
        taus = [r["tau"] for r in csv.DictReader((tmp_path / "full" / "history.csv").open())]
        resumed = [r["tau"] for r in csv.DictReader((tmp_path / "b" / "history.csv").open())]
        assert resumed == taus[4:]

    def test_resume_rejects_new_settings(self, data_dir, tmp_path):
        run("train", "--data", data_dir, "--out", tmp_path / "a", "--stop-at", 2, *SMALL_MODEL)
        code = run("train", "--data", data_dir, "--out", tmp_path / "b", "--resume", tmp_path / "a" / "checkpoint.json",
                   "--lr", 0.1)
        assert code == 2

    def test_missing_data(self, tmp_path):
        assert run("train", "--data", tmp_path / "nowhere", "--out", tmp_path / "o") == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self, data_dir, tmp_path, capsys):
        code = run("train", "--data", data_dir, "--out", tmp_path / "o", *SMALL_MODEL, "--steps", 300,
                   "--lr", 1e6, "--lr-final-frac", 1)
        assert code == 3
        assert "last finite step" in capsys.readouterr().err
        assert (tmp_path / "o" / "history.csv").exists()

    def test_bad_checkpoint_version(self, data_dir, tmp_path):
        run("train", "--data", data_dir, "--out", tmp_path / "a", "--stop-at", 1, *SMALL_MODEL)
        ckpt = tmp_path / "a" / "checkpoint.json"
        ckpt.write_text(ckpt.read_text().replace('"checkpoint_version": 1', '"checkpoint_version": 7'))
        assert run("train", "--data", data_dir, "--out", tmp_path / "b", "--resume", ckpt) == 4


class TestEval:
    def test_checkpoint_report(self, data_dir, tmp_path):
        run("train", "--data", data_dir, "--out", tmp_path / "r", *SMALL_MODEL)
        report_path = tmp_path / "report.json"
        assert run("eval", "--checkpoint", tmp_path / "r" / "checkpoint.json", "--data", data_dir,
                   "--out", report_path) == 0
        report = json.loads(report_path.read_text())
        assert report["depth"] == 2 and len(report["recon_error"]) == 3
        assert report["distortion_monotone"] is True

    def test_csv_rows_per_depth(self, data_dir, tmp_path):
        run("train", "--data", data_dir, "--out", tmp_path / "r", *SMALL_MODEL)
        out = tmp_path / "report.csv"
        run("eval", "--checkpoint", tmp_path / "r" / "checkpoint.json", "--data", data_dir, "--format", "csv",
            "--out", out)
        rows = list(csv.DictReader(out.open()))
        assert [r["keep_levels"] for r in rows] == ["0", "1", "2"]

    def test_copy_baseline(self, tmp_path):
        out = tmp_path / "m.json"
        code = run("eval", "--outputs", FIXTURES / "copy" / "outputs.txt", "--inputs", FIXTURES / "copy" / "inputs.txt",
                   "--references", FIXTURES / "copy" / "references.txt", "--out", out)
        assert code == 0
        metrics = json.loads(out.read_text())["metrics"]
        assert metrics == {"bleu": 37.1, "self_bleu": 100.0, "ibleu@0.8": 9.68}

    def test_nothing_to_do(self):
        assert run("eval") == 2

    def test_checkpoint_without_data(self, tmp_path):
        assert run("eval", "--checkpoint", tmp_path / "x.json") == 2


class TestMetrics:
    def test_alpha_sweep(self, tmp_path):
        out = tmp_path / "m.csv"
        copy = FIXTURES / "copy"
        assert run("metrics", "--outputs", copy / "outputs.txt", "--inputs", copy / "inputs.txt", "--references",
                   copy / "references.txt", "--alpha", "0.7,0.8,0.9", "--format", "csv", "--out", out) == 0
        rows = list(csv.DictReader(out.open()))
        assert list(rows[0]) == ["bleu", "self_bleu", "ibleu@0.7", "ibleu@0.8", "ibleu@0.9"]
        assert rows[0]["ibleu@0.8"] == "9.68"

    def test_pairwise(self, tmp_path, capsys):
        copy = FIXTURES / "copy"
        run("metrics", "--outputs", copy / "outputs.txt", "--inputs", copy / "inputs.txt", "--references",
            copy / "references.txt", "--candidates", copy / "outputs.txt", copy / "outputs.txt")
        assert json.loads(capsys.readouterr().out)["p_bleu"] == 100.0

    def test_length_mismatch(self, tmp_path):
        short = tmp_path / "short.txt"
        short.write_text("one line\n")
        copy = FIXTURES / "copy"
        assert run("metrics", "--outputs", short, "--inputs", copy / "inputs.txt",
                   "--references", copy / "references.txt") == 2


class TestQuantize:
    def test_kmeans_then_saved_codebook(self, tmp_path):
        run("gen-data", "--out", tmp_path, "--kind", "mixture", "--n-samples", 60, "--hier-dim", 3)
        vectors = tmp_path / "vectors.json"
        assert run("quantize", "--vectors", vectors, "--kmeans", "--depth", 2, "--codes", 3,
                   "--save-codebook", tmp_path / "cb.json", "--out", tmp_path / "t1.json") == 0
        assert run("quantize", "--vectors", vectors, "--codebook", tmp_path / "cb.json",
                   "--out", tmp_path / "t2.json") == 0
        assert (tmp_path / "t1.json").read_bytes() == (tmp_path / "t2.json").read_bytes()
        _, traces, _ = load_arrays(tmp_path / "t1.json", "traces")
        assert traces["codes"].shape == (60, 2) and traces["scores"].shape == (60, 2, 3)

    def test_needs_one_source(self, tmp_path):
        run("gen-data", "--out", tmp_path, "--kind", "mixture", "--n-samples", 10)
        assert run("quantize", "--vectors", tmp_path / "vectors.json", "--out", tmp_path / "t.json") == 2

    def test_wrong_document(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        assert run("quantize", "--vectors", bad, "--kmeans", "--out", tmp_path / "t.json") == 4


class TestAblate:
    def test_rows(self, data_dir, tmp_path):
        out = tmp_path / "abl.csv"
        code = run("ablate", "--data", data_dir, "--out", out, *SMALL_MODEL, "--specs", "Full,NoHierarchy",
                   "--seeds", "0,1,2", "--kmeans-iters", 5)
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 6
        assert [(r["name"], r["seed"]) for r in rows] == [
            (n, str(s)) for n in ("Full", "NoHierarchy") for s in (0, 1, 2)
        ]

    def test_unknown_spec(self, data_dir, tmp_path):
        assert run("ablate", "--data", data_dir, "--out", tmp_path / "a.csv", "--specs", "Nope") == 2


def test_parser_lists_verbs():
    actions = [a for a in build_parser()._actions if a.dest == "command"]
    assert set(actions[0].choices) == {"gen-data", "train", "eval", "ablate", "quantize", "metrics"}
