"""
Tests for orthovae.experiments: dataset files, training, evaluation,
sweeps, reports and the theory check on a tiny configuration.
"""

import math

import numpy as np
import pytest

from orthovae import experiments
from orthovae.metrics import MetricsReport
from orthovae.models import Autoencoder
from orthovae.utils import read_csv_rows, read_json


class TestDatasetFiles:
    """Test dataset generation on disk."""

    def test_generate_and_refuse_overwrite(self, tiny_config, tmp_path):
        """An existing dataset is kept unless overwrite is requested."""
        first = experiments.generate_dataset_files(tiny_config, tmp_path)
        assert first["success"]
        assert (tmp_path / "tiny" / "dataset.csv").exists()
        assert (tmp_path / "tiny" / "config.json").exists()

        second = experiments.generate_dataset_files(tiny_config, tmp_path)
        assert not second["success"]
        assert "overwrite" in second["message"]
        assert experiments.generate_dataset_files(tiny_config, tmp_path, overwrite=True)["success"]

    def test_splits(self, tiny_config, tmp_path):
        """Splits follow the configured fractions."""
        train, evaluation, test = experiments.dataset_splits(tiny_config, tmp_path)
        assert (train.sample_count, evaluation.sample_count, test.sample_count) == (160, 20, 20)


class TestTraining:
    """Test multi-seed training."""

    def test_run_writes_seed_files(self, tiny_config, tmp_path):
        """Every seed gets a checkpoint, a trace and a status file."""
        results = experiments.run_training(tiny_config, tmp_path)
        assert [r["seed"] for r in results] == [0, 1]
        assert all(r["success"] for r in results)
        assert all(r["steps"] == 10 for r in results)
        for seed in (0, 1):
            seed_dir = tmp_path / "tiny" / str(seed)
            assert (seed_dir / "checkpoint.npz").exists()
            assert read_json(seed_dir / "status.json")["success"] is True
            trace = experiments.read_trace(seed_dir / "trace.csv")
            assert [step for step, _ in trace] == [0, 2, 4, 6, 8, 10]

    def test_trace_columns(self, tiny_config, tmp_path):
        """Trace rows carry the loss decomposition."""
        experiments.run_training(tiny_config, tmp_path, seeds=[0])
        rows = read_csv_rows(tmp_path / "tiny" / "0" / "trace.csv")
        assert tuple(rows[0]) == experiments.TRACE_FIELDS
        for row in rows:
            assert float(row["rec_total"]) == pytest.approx(float(row["rec_det"]) + float(row["rec_stoch"]), rel=1e-6, abs=1e-9)

    def test_same_seed_same_model(self, tiny_config, tmp_path):
        """Training is reproducible per seed."""
        experiments.run_training(tiny_config, tmp_path / "a", seeds=[1])
        experiments.run_training(tiny_config, tmp_path / "b", seeds=[1])
        a = Autoencoder.load_checkpoint(tmp_path / "a" / "tiny" / "1" / "checkpoint.npz")
        b = Autoencoder.load_checkpoint(tmp_path / "b" / "tiny" / "1" / "checkpoint.npz")
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb)

    def test_seed_log_reports_duration(self, tiny_config, tmp_path, caplog):
        """The per-seed summary line carries the step count and elapsed time."""
        train, eval_split, _ = experiments.dataset_splits(tiny_config, tmp_path)
        with caplog.at_level("INFO", logger="orthovae.experiments"):
            experiments.train_seed(tiny_config, train, eval_split, 0, tmp_path / "seed0")
        lines = [r.getMessage() for r in caplog.records if r.getMessage().startswith("Seed 0: completed")]
        assert len(lines) == 1
        assert "after 10 steps in " in lines[0]
        assert lines[0].endswith("s")

    def test_zero_epochs(self, tiny_config, tmp_path):
        """Zero epochs keeps the initialization and a single trace row."""
        config = tiny_config.with_overrides(epochs=0)
        result = experiments.run_training(config, tmp_path, seeds=[0])[0]
        assert result["success"]
        assert result["steps"] == 0
        assert len(experiments.read_trace(tmp_path / "tiny" / "0" / "trace.csv")) == 1

    def test_plain_autoencoder_has_no_kl_error(self, tiny_config, tmp_path):
        """Without a KL term the relative KL error is left empty."""
        config = tiny_config.with_overrides(model_kind="ae", epochs=1)
        experiments.run_training(config, tmp_path, seeds=[0])
        trace = experiments.read_trace(tmp_path / "tiny" / "0" / "trace.csv")
        assert all(value is None for _, value in trace)


class TestEvaluation:
    """Test per-seed metrics and run summaries."""

    def test_run_metrics(self, tiny_config, tmp_path):
        """Metrics are written per seed and aggregated per run."""
        experiments.run_training(tiny_config, tmp_path)
        summary = experiments.run_metrics(tiny_config, tmp_path)
        assert summary["seeds"] == [0, 1]
        assert summary["failed_seeds"] == []
        assert summary["name"] == "tiny"
        assert (tmp_path / "tiny" / "summary.json").exists()
        assert len(read_csv_rows(tmp_path / "tiny" / "summary.csv")) == 2

        report = MetricsReport.from_dict(read_json(tmp_path / "tiny" / "0" / "metrics.json"))
        assert report.seed == 0
        assert not report.failed
        assert report.epochs == 2
        assert report.delta_kl_trace[0][0] == 0
        assert 0.0 <= report.polarized_fraction <= 1.0
        assert report.dto_used <= tiny_config.dto_samples

    def test_metrics_file_is_deterministic(self, tiny_config, tmp_path):
        """Evaluating twice writes identical metrics files."""
        experiments.run_training(tiny_config, tmp_path, seeds=[0])
        experiments.run_metrics(tiny_config, tmp_path, seeds=[0])
        first = (tmp_path / "tiny" / "0" / "metrics.json").read_bytes()
        experiments.run_metrics(tiny_config, tmp_path, seeds=[0])
        assert (tmp_path / "tiny" / "0" / "metrics.json").read_bytes() == first

    def test_untrained_seed_reported_as_failed(self, tiny_config, tmp_path):
        """A seed without a training status yields a failed report."""
        _, _, test = experiments.dataset_splits(tiny_config, tmp_path)
        report = experiments.evaluate_seed(tiny_config, tmp_path / "tiny" / "7", 7, test)
        assert report.failed
        assert report.dto is None
        assert (tmp_path / "tiny" / "7" / "metrics.json").exists()


class TestSweepsAndReports:
    """Test beta sweeps, reports and plot files."""

    def test_beta_sweep(self, tiny_config, tmp_path):
        """One row per beta, sorted, with the reference beta marked."""
        config = tiny_config.with_overrides(epochs=1)
        rows = experiments.run_beta_sweep(config, [1e-2, 1e-3], tmp_path, seeds=[0])
        assert [r["beta"] for r in rows] == [1e-3, 1e-2]
        assert [r["chosen"] for r in rows] == [True, False]
        assert (tmp_path / "tiny" / "sweep.csv").exists()
        assert (tmp_path / "tiny" / "plot_sweep.py").exists()
        assert (tmp_path / "tiny_beta0.001" / "summary.json").exists()

    def test_sweep_needs_betas(self, tiny_config, tmp_path):
        """An empty beta list is rejected."""
        with pytest.raises(ValueError):
            experiments.run_beta_sweep(tiny_config, [], tmp_path)

    def test_report(self, tiny_config, tmp_path):
        """Reports collect summaries and add a random-decoder row."""
        experiments.run_training(tiny_config, tmp_path)
        experiments.run_metrics(tiny_config, tmp_path)
        report = experiments.build_report([tmp_path / "tiny"], tmp_path / "report")
        assert "tiny" in report["summaries"]
        assert "tiny (random decoder)" in report["summaries"]
        assert set(report["correlation"]) == {"r", "p_value", "count"}
        assert (tmp_path / "report" / "report.json").exists()
        assert (tmp_path / "report" / "dto_vs_disent.dat").exists()

    def test_plot_data_drops_missing(self, tmp_path):
        """Rows with a missing value are left out of plot files."""
        path = experiments.write_plot_data(tmp_path / "xy.dat", [1.0, 2.0, 3.0], [0.5, None, float("nan")])
        assert path.read_text().splitlines() == ["1 0.5"]

    def test_plot_script_lists_files(self, tmp_path):
        """Plot scripts name their data files and image."""
        path = experiments.write_plot_script(tmp_path / "plot.py", [("a.dat", "x", "y", False, None)], "a.png")
        text = path.read_text()
        assert "a.dat" in text
        assert "a.png" in text
        compile(text, str(path), "exec")


class TestTheoryCheck:
    """Test the theory property suite on small problem counts."""

    def test_worked_examples(self):
        """The worked examples reproduce their coefficients and minima."""
        checks = experiments.check_worked_examples()
        assert len(checks) == 4
        assert all(c["passed"] for c in checks)

    def test_suite(self):
        """The suite reports named checks with residuals."""
        checks = experiments.run_theory_check(problems=2, starts=2, permutation_samples=20, seed=1)
        by_name = {c["name"]: c for c in checks}
        for name in (
            "signed permutation search",
            "closed-form optimum attains bound",
            "volume bound holds",
            "volume bound attained by orthogonalizing rotation",
            "orthogonality conditions agree",
            "full-covariance loss invariant under rotation",
            "diagonal KL changes under rotation",
        ):
            assert by_name[name]["passed"], by_name[name]
        assert "local improvement reaches bound" in by_name
        assert all(not math.isnan(c["residual"]) for c in checks)
