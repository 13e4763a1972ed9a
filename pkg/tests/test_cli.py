import numpy as np
import pytest
import torch

from als_seg.cli import main, read_run_metrics
from als_seg.active_learner import read_manifest
from als_seg.pool import SegmentationDataset, split_train_val
from als_seg.seeding import derive_seed

torch.set_num_threads(2)

FAST_LEARNER = ["--epochs-per-teach", "5"]


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    code = main(
        [
            "synth",
            "--output-dir", str(out),
            "--n-images", "40",
            "--image-size", "16", "16",
            "--num-classes", "4",
            "--class-prior", "0.45,0.3,0.15,0.1",
            "--rare-class-rate", "0.1",
            "--seed", "3",
        ]
    )
    assert code == 0
    return out


def run_select(dataset_dir, out, seed="7", extra=()):
    return main(
        [
            "select",
            "--dataset", str(dataset_dir),
            "--output-dir", str(out),
            "--labeled-ratio", "0.1",
            "--strategy", "entropy",
            "--seed", seed,
            *FAST_LEARNER,
            *extra,
        ]
    )


class TestSynthCommand:
    def test_record_count(self, dataset_dir):
        ds = SegmentationDataset.load(dataset_dir)
        assert len(ds.ids) == 40
        assert ds.num_classes == 4


class TestSelectCommand:
    def test_manifest_count_matches_floor(self, dataset_dir, tmp_path):
        out = tmp_path / "run"
        assert run_select(dataset_dir, out) == 0
        ids, labels = read_manifest(out / "manifest.tsv")
        # train split is 32 of 40; floor(0.1 * 32) = 3
        assert len(ids) == 3
        metrics = read_run_metrics(out)
        assert metrics["strategy"] == "entropy" and metrics["ratio"] == "0.1"
        assert (out / "config.txt").exists()
        assert (out / "selection_log.tsv").exists()

    def test_identical_flags_identical_bytes(self, dataset_dir, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_select(dataset_dir, a) == 0
        assert run_select(dataset_dir, b) == 0
        assert (a / "manifest.tsv").read_bytes() == (b / "manifest.tsv").read_bytes()

    def test_random_alpha_one_equals_seeded_draw(self, dataset_dir, tmp_path):
        out = tmp_path / "rnd"
        code = main(
            [
                "select",
                "--dataset", str(dataset_dir),
                "--output-dir", str(out),
                "--labeled-ratio", "0.1",
                "--strategy", "random",
                "--alpha-init", "1.0",
                "--seed", "11",
                *FAST_LEARNER,
            ]
        )
        assert code == 0
        ids, _ = read_manifest(out / "manifest.tsv")
        ds = SegmentationDataset.load(dataset_dir)
        train, _ = split_train_val(ds.ids, 0.8, derive_seed(11, "split"))
        rng = np.random.default_rng(derive_seed(11, "init-pool"))
        expected = [sorted(train)[i] for i in rng.choice(len(train), size=3, replace=False)]
        assert ids == expected

    def test_manifest_disjoint_from_validation(self, dataset_dir, tmp_path):
        out = tmp_path / "leak"
        assert run_select(dataset_dir, out) == 0
        ids, _ = read_manifest(out / "manifest.tsv")
        ds = SegmentationDataset.load(dataset_dir)
        _, val = split_train_val(ds.ids, 0.8, derive_seed(7, "split"))
        assert not set(ids) & set(val)

    def test_bad_ratio_is_config_error(self, dataset_dir, tmp_path):
        code = main(
            [
                "select",
                "--dataset", str(dataset_dir),
                "--output-dir", str(tmp_path / "x"),
                "--labeled-ratio", "1.5",
                "--seed", "1",
            ]
        )
        assert code == 2

    def test_missing_dataset_is_runtime_error(self, tmp_path):
        code = main(
            [
                "select",
                "--dataset", str(tmp_path / "nope"),
                "--output-dir", str(tmp_path / "y"),
                "--labeled-ratio", "0.1",
                "--seed", "1",
            ]
        )
        assert code == 1


@pytest.fixture(scope="module")
def selected_run(dataset_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("selrun")
    assert run_select(dataset_dir, out) == 0
    return out


def run_train(dataset_dir, manifest, out, iterations="8", extra=()):
    return main(
        [
            "train",
            "--dataset", str(dataset_dir),
            "--manifest", str(manifest),
            "--output-dir", str(out),
            "--iterations", iterations,
            "--batch-size", "4",
            "--checkpoint-every", "4",
            "--seed", "7",
            *extra,
        ]
    )


class TestTrainCommand:
    def test_single_iteration_writes_checkpoint_and_log(self, dataset_dir, selected_run, tmp_path):
        out = tmp_path / "t1"
        assert run_train(dataset_dir, selected_run / "manifest.tsv", out, iterations="1") == 0
        log = (out / "train_log.tsv").read_text().splitlines()
        assert len([l for l in log if not l.startswith("#")]) == 1
        assert (out / "checkpoints" / "step_000001.pt").exists()

    def test_resume_continues_iteration_numbering(self, dataset_dir, selected_run, tmp_path):
        out = tmp_path / "resume"
        assert run_train(dataset_dir, selected_run / "manifest.tsv", out, iterations="4") == 0
        ckpt = out / "checkpoints" / "step_000004.pt"
        assert ckpt.exists()
        assert run_train(
            dataset_dir, selected_run / "manifest.tsv", out,
            iterations="8", extra=["--resume", str(ckpt)],
        ) == 0
        rows = [
            l for l in (out / "train_log.tsv").read_text().splitlines()
            if not l.startswith("#")
        ]
        assert [int(r.split("\t")[0]) for r in rows] == list(range(1, 9))
        assert (out / "checkpoints" / "step_000008.pt").exists()

    def test_missing_mask_fails_before_training(self, dataset_dir, tmp_path):
        # copy the dataset but strip one mask reference from the index
        import shutil

        broken = tmp_path / "broken_ds"
        shutil.copytree(dataset_dir, broken)
        lines = (broken / "index.tsv").read_text().splitlines()
        sid = lines[0].split("\t")[0]
        lines[0] = "\t".join([sid, lines[0].split("\t")[1], "-", lines[0].split("\t")[3]])
        (broken / "index.tsv").write_text("\n".join(lines) + "\n")

        manifest = tmp_path / "manifest.tsv"
        manifest.write_text(f"{sid}\t0\n")
        out = tmp_path / "t2"
        code = run_train(broken, manifest, out, iterations="3")
        assert code == 1
        assert not (out / "train_log.tsv").exists()

    def test_unknown_manifest_id_fails_preflight(self, dataset_dir, tmp_path):
        manifest = tmp_path / "m.tsv"
        manifest.write_text("zzz\t0\n")
        assert run_train(dataset_dir, manifest, tmp_path / "t3", iterations="2") == 1


@pytest.fixture(scope="module")
def trained_run(dataset_dir, selected_run, tmp_path_factory):
    out = tmp_path_factory.mktemp("trainrun")
    assert run_train(dataset_dir, selected_run / "manifest.tsv", out, iterations="8") == 0
    return out


class TestEvalCommand:
    def test_eval_writes_scores(self, dataset_dir, selected_run, trained_run):
        code = main(
            [
                "eval",
                "--dataset", str(dataset_dir),
                "--checkpoint", str(trained_run / "checkpoints" / "step_000008.pt"),
                "--split", "val",
                "--manifest", str(selected_run / "manifest.tsv"),
                "--output-dir", str(trained_run),
                "--seed", "7",
            ]
        )
        assert code == 0
        metrics = read_run_metrics(trained_run)
        assert 0.0 <= float(metrics["miou"]) <= 1.0
        assert (trained_run / "eval.txt").read_text().startswith("split=val")

    def test_leaking_manifest_rejected(self, dataset_dir, trained_run, tmp_path):
        ds = SegmentationDataset.load(dataset_dir)
        _, val = split_train_val(ds.ids, 0.8, derive_seed(7, "split"))
        manifest = tmp_path / "leaky.tsv"
        manifest.write_text(f"{val[0]}\t0\n")
        code = main(
            [
                "eval",
                "--dataset", str(dataset_dir),
                "--checkpoint", str(trained_run / "checkpoints" / "step_000008.pt"),
                "--split", "val",
                "--manifest", str(manifest),
                "--output-dir", str(tmp_path / "e2"),
                "--seed", "7",
            ]
        )
        assert code == 1

    def test_class_count_mismatch_rejected(self, dataset_dir, trained_run, tmp_path):
        import shutil

        other = tmp_path / "ds3"
        shutil.copytree(dataset_dir, other)
        (other / "meta.txt").write_text("num_classes=3\n")
        code = main(
            [
                "eval",
                "--dataset", str(other),
                "--checkpoint", str(trained_run / "checkpoints" / "step_000008.pt"),
                "--split", "val",
                "--output-dir", str(tmp_path / "e3"),
                "--seed", "7",
            ]
        )
        assert code == 1


class TestDiversityCommand:
    def test_indices_written(self, dataset_dir, selected_run):
        code = main(
            [
                "diversity",
                "--dataset", str(dataset_dir),
                "--manifest", str(selected_run / "manifest.tsv"),
                "--output-dir", str(selected_run),
                "--seed", "7",
            ]
        )
        assert code == 0
        metrics = read_run_metrics(selected_run)
        assert float(metrics["shannon"]) >= 0.0
        assert 0.0 <= float(metrics["simpson"]) < 1.0

    def test_matches_library_function(self, dataset_dir, selected_run):
        from als_seg.metrics import diversity_report

        ds = SegmentationDataset.load(dataset_dir)
        ids, _ = read_manifest(selected_run / "manifest.tsv")
        shannon, simpson = diversity_report(ids, ds)
        metrics = read_run_metrics(selected_run)
        assert float(metrics["shannon"]) == pytest.approx(shannon)
        assert float(metrics["simpson"]) == pytest.approx(simpson)


class TestReportCommand:
    def make_run(self, tmp_path, name, ratio, strategy, seed, miou, shannon, simpson):
        d = tmp_path / name
        d.mkdir()
        (d / "metrics.txt").write_text(
            f"miou={miou}\nratio={ratio}\nseed={seed}\nshannon={shannon}\n"
            f"simpson={simpson}\nstrategy={strategy}\n"
        )
        return d

    def test_three_runs_three_rows_plus_summary(self, tmp_path):
        runs = [
            self.make_run(tmp_path, f"r{i}", 0.05, "entropy", i, 0.5 + 0.1 * i, 1.0 + i, 0.5)
            for i in range(3)
        ]
        out = tmp_path / "report"
        code = main(["report", *[str(r) for r in runs], "--output-dir", str(out)])
        assert code == 0
        lines = (out / "report.csv").read_text().splitlines()
        assert lines[0] == "ratio,strategy,seed,miou,shannon,simpson"
        assert len(lines) == 4
        # mean/std match hand aggregation
        summary = (out / "summary.csv").read_text().splitlines()
        parts = summary[1].split(",")
        mious = np.array([0.5, 0.6, 0.7])
        assert float(parts[3]) == pytest.approx(mious.mean())
        assert float(parts[4]) == pytest.approx(mious.std())

    def test_idempotent(self, tmp_path):
        run = self.make_run(tmp_path, "r0", 0.05, "entropy", 0, 0.5, 1.0, 0.5)
        out = tmp_path / "rep"
        assert main(["report", str(run), "--output-dir", str(out)]) == 0
        first = (out / "report.csv").read_bytes()
        assert main(["report", str(run), "--output-dir", str(out)]) == 0
        assert (out / "report.csv").read_bytes() == first

    def test_malformed_run_skipped_with_warning(self, tmp_path, capsys):
        good = self.make_run(tmp_path, "good", 0.05, "entropy", 0, 0.5, 1.0, 0.5)
        bad = tmp_path / "bad"
        bad.mkdir()
        (bad / "metrics.txt").write_text("ratio=0.05\n")
        out = tmp_path / "rep2"
        code = main(["report", str(good), str(bad), "--output-dir", str(out)])
        assert code == 0
        assert "skipping" in capsys.readouterr().err
        assert len((out / "report.csv").read_text().splitlines()) == 2

    def test_no_valid_runs_fails(self, tmp_path):
        bad = tmp_path / "bad"
        bad.mkdir()
        assert main(["report", str(bad), "--output-dir", str(tmp_path / "rep3")]) == 1


class TestSweepCommand:
    def test_grid_produces_isolated_reproducible_runs(self, dataset_dir, tmp_path):
        def sweep(base):
            return main(
                [
                    "sweep",
                    "--dataset", str(dataset_dir),
                    "--output-dir", str(base),
                    "--labeled-ratio", "0.1",
                    "--alpha-grid", "0.5,1.0",
                    "--beta-grid", "0.5",
                    "--strategy-grid", "entropy,random",
                    "--seed", "5",
                    *FAST_LEARNER,
                ]
            )

        base_a = tmp_path / "sweep_a"
        assert sweep(base_a) == 0
        dirs = sorted(d.name for d in base_a.iterdir() if d.is_dir())
        assert dirs == ["a0.5_b0.5_entropy", "a0.5_b0.5_random", "a1_b0.5_entropy", "a1_b0.5_random"]
        seeds = {read_run_metrics(base_a / d)["seed"] for d in dirs}
        assert len(seeds) == 4  # per-point derived seeds are distinct

        base_b = tmp_path / "sweep_b"
        assert sweep(base_b) == 0
        for d in dirs:
            assert (base_a / d / "manifest.tsv").read_bytes() == (
                base_b / d / "manifest.tsv"
            ).read_bytes()


class TestSweepFull:
    def test_full_sweep_trains_and_scores_each_point(self, dataset_dir, tmp_path):
        base = tmp_path / "sweepfull"
        code = main(
            [
                "sweep",
                "--dataset", str(dataset_dir),
                "--output-dir", str(base),
                "--labeled-ratio", "0.1",
                "--alpha-grid", "1.0",
                "--beta-grid", "0.5",
                "--strategy-grid", "random",
                "--seed", "5",
                "--full",
                "--iterations", "4",
                *FAST_LEARNER,
            ]
        )
        assert code == 0
        point = base / "a1_b0.5_random"
        metrics = read_run_metrics(point)
        assert set(metrics) >= {"ratio", "strategy", "seed", "miou", "shannon", "simpson"}
        assert (point / "checkpoints" / "step_000004.pt").exists()
        # a full point feeds report directly
        out = tmp_path / "rep"
        assert main(["report", str(point), "--output-dir", str(out)]) == 0


class TestThreadCap:
    def test_env_variable_respected(self, dataset_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("ALS_SEG_THREADS", "1")
        out = tmp_path / "threads"
        assert run_select(dataset_dir, out) == 0
        assert torch.get_num_threads() == 1
        torch.set_num_threads(2)
