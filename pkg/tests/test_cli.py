"""End-to-end command-line tests against a synthetic cached dataset.

The svhn loader reads flat-tensor files straight from the cache directory, so
dropping synthetic files there exercises every subcommand without network
access. Fetch tests point the url table at local file:// sources.
"""

import json
import shutil

import numpy as np
import pytest
from conftest import make_synth_dataset

from ffbench.cli import main
from ffbench.config import ExperimentConfig
from ffbench.datasets import DATASET_URLS, load_manifests, save_flat_tensor
from ffbench.evaluation import EvalReport

RUN_FILES = {"config.json", "checkpoint.ffck", "metrics.jsonl"}


@pytest.fixture(scope="module")
def svhn_cache(tmp_path_factory):
    cache = tmp_path_factory.mktemp("cache")
    (cache / "svhn").mkdir()
    save_flat_tensor(cache / "svhn" / "svhn_train.ftns", make_synth_dataset(200, seed=31))
    save_flat_tensor(
        cache / "svhn" / "svhn_test.ftns", make_synth_dataset(80, seed=32, split="test")
    )
    return cache


def write_cfg(tmp_path, **overrides):
    data = dict(
        dataset="svhn",
        task="rotation",
        trainer="ff",
        widths=[8, 8],
        epochs=1,
        probe_epochs=2,
        batch_size=64,
        learning_rate=0.001,
        seed=9,
        output_dir=str(tmp_path / "runs"),
    )
    data.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return path, data


def run(cache, *argv):
    return main(["--cache-dir", str(cache), *argv])


class TestTrain:
    def test_writes_run_dir(self, tmp_path, svhn_cache):
        cfg_path, _ = write_cfg(tmp_path)
        assert run(svhn_cache, "train", str(cfg_path)) == 0
        run_dir = tmp_path / "runs" / "svhn_rotation_ff_seed9"
        assert {p.name for p in run_dir.iterdir()} == RUN_FILES

    def test_config_copy_is_normalized(self, tmp_path, svhn_cache):
        cfg_path, data = write_cfg(tmp_path)
        run(svhn_cache, "train", str(cfg_path))
        saved = (tmp_path / "runs" / "svhn_rotation_ff_seed9" / "config.json").read_text()
        assert saved == ExperimentConfig(**data).to_json()

    def test_rerun_guard_and_force(self, tmp_path, svhn_cache, capsys):
        cfg_path, _ = write_cfg(tmp_path)
        assert run(svhn_cache, "train", str(cfg_path)) == 0
        assert run(svhn_cache, "train", str(cfg_path)) == 2
        assert "--force" in capsys.readouterr().err
        assert run(svhn_cache, "train", str(cfg_path), "--force") == 0

    def test_seed_override(self, tmp_path, svhn_cache):
        cfg_path, _ = write_cfg(tmp_path)
        assert run(svhn_cache, "train", str(cfg_path), "--seed", "5") == 0
        run_dir = tmp_path / "runs" / "svhn_rotation_ff_seed5"
        cfg = ExperimentConfig.load(run_dir / "config.json")
        assert cfg.seed == 5

    def test_metrics_records(self, tmp_path, svhn_cache):
        cfg_path, _ = write_cfg(tmp_path, epochs=2)
        run(svhn_cache, "train", str(cfg_path))
        lines = (tmp_path / "runs" / "svhn_rotation_ff_seed9" / "metrics.jsonl").read_text().splitlines()
        records = [json.loads(line) for line in lines]
        assert len(records) == 4  # 2 epochs x 2 layers
        for r in records:
            assert set(r) == {"run", "phase", "epoch", "metric", "value", "ts"}
            assert r["run"] == "svhn_rotation_ff_seed9"
            assert r["phase"] == "pretrain"
        assert {r["metric"] for r in records} == {"loss_layer0", "loss_layer1"}

    def test_bp_metrics_single_loss(self, tmp_path, svhn_cache):
        cfg_path, _ = write_cfg(tmp_path, trainer="bp_ce", task="classify")
        run(svhn_cache, "train", str(cfg_path))
        lines = (tmp_path / "runs" / "svhn_classify_bp_ce_seed9" / "metrics.jsonl").read_text().splitlines()
        assert [json.loads(line)["metric"] for line in lines] == ["loss"]

    def test_bad_config_exit_2(self, tmp_path, svhn_cache, capsys):
        cfg_path, _ = write_cfg(tmp_path, task="sudoku")
        assert run(svhn_cache, "train", str(cfg_path)) == 2
        err = capsys.readouterr().err
        assert "config error" in err and "task" in err

    def test_missing_dataset_exit_1(self, tmp_path, capsys):
        cfg_path, _ = write_cfg(tmp_path)
        empty_cache = tmp_path / "empty"
        empty_cache.mkdir()
        assert run(empty_cache, "train", str(cfg_path)) == 1
        assert "svhn_train.ftns" in capsys.readouterr().err


class TestEvaluate:
    def test_full_pipeline(self, tmp_path, svhn_cache):
        cfg_path, _ = write_cfg(tmp_path)
        run_dir = tmp_path / "runs" / "svhn_rotation_ff_seed9"
        assert run(svhn_cache, "train", str(cfg_path)) == 0
        assert run(svhn_cache, "evaluate", str(run_dir)) == 0
        assert {p.name for p in run_dir.iterdir()} == RUN_FILES | {"report.json"}
        report = EvalReport.load(run_dir / "report.json")
        assert report.trainer == "ff"
        assert 0.0 <= report.transfer_accuracy <= 1.0
        assert report.task_accuracy_slow is not None
        assert len(report.per_layer_accuracy) == 2
        phases = {json.loads(line)["phase"] for line in (run_dir / "metrics.jsonl").read_text().splitlines()}
        assert "evaluate" in phases

    def test_rerun_guard_and_force(self, tmp_path, svhn_cache, capsys):
        cfg_path, _ = write_cfg(tmp_path)
        run_dir = tmp_path / "runs" / "svhn_rotation_ff_seed9"
        run(svhn_cache, "train", str(cfg_path))
        assert run(svhn_cache, "evaluate", str(run_dir)) == 0
        assert run(svhn_cache, "evaluate", str(run_dir)) == 2
        assert "--force" in capsys.readouterr().err
        assert run(svhn_cache, "evaluate", str(run_dir), "--force") == 0

    def test_missing_run_dir_exit_2(self, tmp_path, svhn_cache, capsys):
        assert run(svhn_cache, "evaluate", str(tmp_path / "nope")) == 2
        assert "train" in capsys.readouterr().err


class TestProbe:
    def test_probe_report(self, tmp_path, svhn_cache):
        cfg_path, _ = write_cfg(tmp_path)
        run_dir = tmp_path / "runs" / "svhn_rotation_ff_seed9"
        run(svhn_cache, "train", str(cfg_path))
        assert run(svhn_cache, "probe", str(run_dir)) == 0
        report = EvalReport.load(run_dir / "report.json")
        assert report.transfer_accuracy is not None
        assert report.task_accuracy_slow is None
        assert [c["metric"] for c in report.curves] == ["probe_accuracy"] * 2
        assert run(svhn_cache, "probe", str(run_dir)) == 2


class TestEmbed:
    def make_job(self, tmp_path, svhn_cache, **overrides):
        cfg_path, _ = write_cfg(tmp_path)
        run(svhn_cache, "train", str(cfg_path))
        ckpt = tmp_path / "runs" / "svhn_rotation_ff_seed9" / "checkpoint.ffck"
        job = dict(
            checkpoint=str(ckpt),
            dataset="svhn",
            split="test",
            cap=40,
            perplexity=5.0,
            iterations=60,
            seed=3,
            output=str(tmp_path / "emb.csv"),
        )
        job.update(overrides)
        path = tmp_path / "job.json"
        path.write_text(json.dumps(job))
        return path, job

    def test_emits_csv(self, tmp_path, svhn_cache):
        job_path, job = self.make_job(tmp_path, svhn_cache)
        assert run(svhn_cache, "embed", str(job_path)) == 0
        lines = (tmp_path / "emb.csv").read_text().splitlines()
        assert lines[0] == "x,y,label,activity"
        assert len(lines) == 1 + 40
        for line in lines[1:]:
            x, y, label, act = line.split(",")
            float(x), float(y)
            assert 0 <= int(label) < 4
            assert 0.0 <= float(act) <= 1.0

    def test_guard_and_force(self, tmp_path, svhn_cache, capsys):
        job_path, _ = self.make_job(tmp_path, svhn_cache)
        assert run(svhn_cache, "embed", str(job_path)) == 0
        assert run(svhn_cache, "embed", str(job_path)) == 2
        assert "--force" in capsys.readouterr().err
        assert run(svhn_cache, "embed", str(job_path), "--force") == 0

    def test_deterministic(self, tmp_path, svhn_cache):
        job_path, job = self.make_job(tmp_path, svhn_cache)
        run(svhn_cache, "embed", str(job_path))
        first = (tmp_path / "emb.csv").read_bytes()
        job["output"] = str(tmp_path / "emb2.csv")
        job_path.write_text(json.dumps(job))
        run(svhn_cache, "embed", str(job_path))
        assert (tmp_path / "emb2.csv").read_bytes() == first

    def test_unknown_job_field_exit_2(self, tmp_path, svhn_cache, capsys):
        job_path, job = self.make_job(tmp_path, svhn_cache)
        job["colormap"] = "viridis"
        job_path.write_text(json.dumps(job))
        assert run(svhn_cache, "embed", str(job_path)) == 2
        assert "colormap" in capsys.readouterr().err


class TestReport:
    def test_table_and_csv(self, tmp_path, svhn_cache, capsys):
        dirs = []
        for trainer in ("ff", "bp_ce"):
            cfg_path, _ = write_cfg(tmp_path, trainer=trainer)
            run(svhn_cache, "train", str(cfg_path))
            run_dir = tmp_path / "runs" / f"svhn_rotation_{trainer}_seed9"
            run(svhn_cache, "evaluate", str(run_dir))
            dirs.append(str(run_dir))
        missing = str(tmp_path / "runs" / "never_ran")
        csv_path = tmp_path / "table.csv"
        assert run(svhn_cache, "report", *dirs, missing, "--csv", str(csv_path)) == 0
        out = capsys.readouterr().out
        assert f"gap: {missing}" in out

        lines = csv_path.read_text().splitlines()
        assert lines[0] == "task,trainer,metric,svhn"
        rows = {tuple(line.split(",")[:3]): line.split(",")[3] for line in lines[1:]}
        report = EvalReport.load(tmp_path / "runs" / "svhn_rotation_ff_seed9" / "report.json")
        expected = f"{report.transfer_accuracy * 100.0:.2f}"
        assert rows[("rotation", "ff", "transfer_accuracy")] == expected
        assert ("rotation", "bp_ce", "task_accuracy_fast") in rows
        assert ("rotation", "ff", "task_accuracy_slow") in rows
        assert ("rotation", "bp_ce", "task_accuracy_slow") not in rows  # CE scores no layers


class TestFetch:
    def idx_sources(self, tmp_path):
        src_dir = tmp_path / "upstream"
        src_dir.mkdir()
        names = (
            "train-images-idx3-ubyte.gz",
            "train-labels-idx1-ubyte.gz",
            "t10k-images-idx3-ubyte.gz",
            "t10k-labels-idx1-ubyte.gz",
        )
        rng = np.random.default_rng(77)
        paths = []
        for name in names:
            p = src_dir / name
            p.write_bytes(rng.integers(0, 256, size=64).astype(np.uint8).tobytes())
            paths.append(p)
        return names, paths

    def patch_mnist(self, monkeypatch, names, paths):
        entry = {
            "format": "idx-gzip",
            "urls": [p.as_uri() for p in paths],
            "splits": {"train": names[:2], "test": names[2:]},
        }
        monkeypatch.setitem(DATASET_URLS, "mnist", entry)

    def test_pin_then_verify(self, tmp_path, monkeypatch, capsys):
        names, paths = self.idx_sources(tmp_path)
        self.patch_mnist(monkeypatch, names, paths)
        cache = tmp_path / "cache"
        assert run(cache, "fetch", "mnist", "--pin") == 0
        assert capsys.readouterr().out.count("pinned mnist:") == 4
        manifests = load_manifests(cache / "manifests.json")
        assert len(manifests["mnist"].sha256) == 4

        assert run(cache, "fetch", "mnist") == 0
        assert capsys.readouterr().out.count("verified") == 4

    def test_corrupt_cache_refetched(self, tmp_path, monkeypatch):
        names, paths = self.idx_sources(tmp_path)
        self.patch_mnist(monkeypatch, names, paths)
        cache = tmp_path / "cache"
        run(cache, "fetch", "mnist", "--pin")
        victim = cache / "mnist" / names[0]
        good = victim.read_bytes()
        victim.write_bytes(b"corrupted")
        assert run(cache, "fetch", "mnist") == 0
        assert victim.read_bytes() == good

    def test_tampered_source_exit_1(self, tmp_path, monkeypatch, capsys):
        names, paths = self.idx_sources(tmp_path)
        self.patch_mnist(monkeypatch, names, paths)
        cache = tmp_path / "cache"
        run(cache, "fetch", "mnist", "--pin")
        paths[1].write_bytes(b"supply chain oops")
        shutil.rmtree(cache / "mnist")
        assert run(cache, "fetch", "mnist") == 1
        assert "sha256" in capsys.readouterr().err

    def test_unpinned_exit_1(self, tmp_path, monkeypatch, capsys):
        names, paths = self.idx_sources(tmp_path)
        self.patch_mnist(monkeypatch, names, paths)
        assert run(tmp_path / "cache", "fetch", "mnist") == 1
        assert "--pin" in capsys.readouterr().err

    def test_svhn_conversion_hint(self, tmp_path, capsys):
        assert run(tmp_path / "cache", "fetch", "svhn") == 0
        assert "conversion" in capsys.readouterr().out

    def test_unknown_dataset_rejected(self, tmp_path, capsys):
        with pytest.raises(SystemExit):
            run(tmp_path / "cache", "fetch", "imagenet")


class TestDeterminism:
    def test_rerun_reproduces_artifacts(self, tmp_path, svhn_cache):
        cfg_path, _ = write_cfg(tmp_path, epochs=2)
        run_dir = tmp_path / "runs" / "svhn_rotation_ff_seed9"
        assert run(svhn_cache, "train", str(cfg_path)) == 0
        assert run(svhn_cache, "evaluate", str(run_dir)) == 0
        stable = ("config.json", "checkpoint.ffck", "report.json")
        first = {name: (run_dir / name).read_bytes() for name in stable}

        assert run(svhn_cache, "train", str(cfg_path), "--force") == 0
        assert run(svhn_cache, "evaluate", str(run_dir), "--force") == 0
        for name in stable:
            assert (run_dir / name).read_bytes() == first[name], name
