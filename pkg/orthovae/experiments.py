"""
Experiments Module for orthovae.

This module runs experiments end to end: dataset generation, multi-seed
training with loss traces, metric evaluation, beta sweeps, reports and the
self-contained theory check.

Run directory layout:
    <out>/<name>/dataset.csv (+ .json sidecar)
    <out>/<name>/config.json
    <out>/<name>/<seed>/checkpoint.npz, trace.csv, status.json, metrics.json
    <out>/<name>/summary.json, summary.csv
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from orthovae import data as data_module
from orthovae.config import (
    BRUTE_FORCE_MAX_DIM,
    LOSS_REDUCTION,
)
from orthovae.errors import DivergenceError
from orthovae.experiment_config import ExperimentConfig
from orthovae.linalg import psdet, random_orthogonal
from orthovae.metrics import (
    SUMMARY_FIELDS,
    MetricsReport,
    active_variables,
    brute_force_signed_permutation,
    delta_kl_from_values,
    disentanglement_score,
    dto,
    nearest_signed_permutation,
    polarized_fraction,
    random_decoder_dto,
)
from orthovae.models import (
    Autoencoder,
    GaussianPosterior,
    apply_latent_rotation,
    diagonal_rotation_projection,
    evaluate_losses,
    kl_diagonal,
    rotate_noise,
    training_step,
)
from orthovae.nets import Optimizer
from orthovae.statistics import aggregate_reports, pearson_correlation
from orthovae.theory import (
    AXES_YES,
    IsolatedProblem,
    axes_preserving_check,
    closed_form_optimum,
    column_norms,
    column_orthogonality_equivalence,
    example_decoders,
    global_lower_bound,
    improve_to_optimum,
    optimal_sigmas,
    orthogonalizing_rotation,
    problem_objective,
    random_assignment,
    volume_bound_gap,
)
from orthovae.utils import (
    ensure_directory_exists,
    format_time,
    make_rng,
    measure_time,
    read_csv_rows,
    read_json,
    write_csv_rows,
    write_json,
)

logger = logging.getLogger(__name__)

TRACE_FIELDS = ("step", "rec_total", "rec_det", "rec_stoch", "kl", "kl_approx", "delta_kl")
SWEEP_FIELDS = (
    "beta", "dto_mean", "dto_std", "disent_mean", "disent_std",
    "active_mean", "overpruned", "chosen",
)


# ============================================================================
# Paths and Datasets
# ============================================================================

def run_directory(config: ExperimentConfig, out: Path) -> Path:
    return Path(out) / config.name


def dataset_path(config: ExperimentConfig, out: Path) -> Path:
    return run_directory(config, out) / "dataset.csv"


def generate_dataset_files(config: ExperimentConfig, out: Path, overwrite: bool = False) -> Dict[str, Any]:
    """
    Generate the configured dataset and write it with its sidecar.

    Returns:
        Result dictionary with 'success', 'message' and 'path'
    """
    path = dataset_path(config, out)
    if path.exists() and not overwrite:
        return {
            "success": False,
            "message": f"{path} already exists; pass --overwrite to replace it",
            "path": str(path),
        }
    dataset = config.dataset
    ds = data_module.generate(dataset.kind, dataset.seed, dataset.ratio, dataset.sample_count)
    data_module.save_dataset(ds, path)
    config.save(run_directory(config, out) / "config.json")
    return {"success": True, "message": f"Wrote {ds.sample_count} samples", "path": str(path)}


def load_or_generate_dataset(config: ExperimentConfig, out: Path) -> data_module.SyntheticDataset:
    """Load the run's dataset file, generating it on first use."""
    path = dataset_path(config, out)
    if not path.exists():
        generate_dataset_files(config, out)
    return data_module.load_dataset(path)


def dataset_splits(config: ExperimentConfig, out: Path):
    ds = load_or_generate_dataset(config, out)
    return data_module.split(ds, config.dataset.split_fractions, config.dataset.split_seed)


# ============================================================================
# Training
# ============================================================================

def _seed_streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent generators for initialization, training noise and evaluation."""
    init, train, evaluation = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(train), np.random.default_rng(evaluation)


def build_model(config: ExperimentConfig, input_dim: int, seed: int) -> Autoencoder:
    """Freshly initialized model for a seed."""
    init_rng, _, _ = _seed_streams(seed)
    return Autoencoder.build(
        kind=config.model_kind,
        input_dim=input_dim,
        latent_dim=config.latent_dim,
        hidden_sizes=config.hidden_sizes,
        activation=config.activation,
        beta=config.beta,
        rng=init_rng,
    )


def _trace_row(model: Autoencoder, inputs: np.ndarray, step: int, seed: int) -> Dict[str, Any]:
    means = model.encode(inputs).mean
    active = active_variables(means) if len(means) >= 2 else list(range(model.latent_dim))
    # fixed evaluation noise keeps traces comparable across steps
    losses = evaluate_losses(model, inputs, rng=_seed_streams(seed)[2], active_set=active)
    delta = delta_kl_from_values(losses.kl, losses.kl_approx)
    return {
        "step": step,
        "rec_total": losses.rec_total,
        "rec_det": losses.rec_deterministic,
        "rec_stoch": losses.rec_stochastic,
        "kl": losses.kl,
        "kl_approx": losses.kl_approx,
        "delta_kl": "" if delta is None else delta,
    }


def read_trace(path: Path) -> List[Tuple[int, Optional[float]]]:
    """(step, delta_kl) pairs of a trace CSV; empty cells become None."""
    return [
        (int(row["step"]), float(row["delta_kl"]) if row["delta_kl"] != "" else None)
        for row in read_csv_rows(path)
    ]


def train_seed(
    config: ExperimentConfig,
    train: data_module.SyntheticDataset,
    eval_split: data_module.SyntheticDataset,
    seed: int,
    seed_dir: Path,
) -> Dict[str, Any]:
    """
    Train one seed and write its checkpoint, trace and status.

    A divergence restores the last good parameters, saves them and is reported
    in the result instead of raised.

    Returns:
        Result dictionary with 'success', 'message', 'seed', 'steps'
    """
    seed_dir = ensure_directory_exists(seed_dir)
    model = build_model(config, train.input_dim, seed)
    _, train_rng, _ = _seed_streams(seed)
    optimizer = Optimizer(config.optimizer, config.learning_rate, model.parameters())

    trace = [_trace_row(model, eval_split.inputs, 0, seed)]
    step = 0
    result: Dict[str, Any] = {"seed": seed, "success": True, "message": "completed"}
    start_time = time.perf_counter()
    try:
        for epoch in range(config.epochs):
            order = train_rng.permutation(train.sample_count)
            for start in range(0, len(order), config.batch_size):
                batch = train.inputs[order[start:start + config.batch_size]]
                training_step(model, batch, optimizer, rng=train_rng)
                step += 1
                if step % config.eval_every == 0:
                    trace.append(_trace_row(model, eval_split.inputs, step, seed))
            logger.debug(
                f"Seed {seed}: epoch {epoch + 1}/{config.epochs} done "
                f"({format_time(time.perf_counter() - start_time)})"
            )
    except DivergenceError as e:
        if e.last_good_parameters is not None:
            model.set_parameters(e.last_good_parameters)
        logger.warning(f"Seed {seed} diverged at step {e.step}: {e}")
        result = {
            "seed": seed,
            "success": False,
            "message": f"diverged at step {e.step}: {e}",
            "diagnostics": {k: str(v) for k, v in e.diagnostics.items()},
        }

    if trace[-1]["step"] != step:
        trace.append(_trace_row(model, eval_split.inputs, step, seed))
    model.save_checkpoint(seed_dir / "checkpoint.npz")
    write_csv_rows(trace, seed_dir / "trace.csv", TRACE_FIELDS)
    result["steps"] = step
    write_json(result, seed_dir / "status.json")
    logger.info(
        f"Seed {seed}: {result['message']} after {step} steps "
        f"in {format_time(time.perf_counter() - start_time)}"
    )
    return result


def _train_job(config_data: Dict[str, Any], out: str, seed: int) -> Dict[str, Any]:
    config = ExperimentConfig.from_dict(config_data)
    train, eval_split, _ = dataset_splits(config, Path(out))
    return train_seed(config, train, eval_split, seed, run_directory(config, Path(out)) / str(seed))


@measure_time
def run_training(
    config: ExperimentConfig,
    out: Path,
    seeds: Optional[Sequence[int]] = None,
    jobs: int = 1,
) -> List[Dict[str, Any]]:
    """
    Train every seed, in parallel processes when jobs > 1.

    Returns:
        One result dictionary per seed, in seed order
    """
    seeds = list(seeds) if seeds is not None else list(config.seeds)
    load_or_generate_dataset(config, out)
    config.save(run_directory(config, out) / "config.json")
    payload = config.model_dump()
    results: Dict[int, Dict[str, Any]] = {}

    if jobs <= 1:
        for seed in seeds:
            results[seed] = _train_job(payload, str(out), seed)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            futures = {executor.submit(_train_job, payload, str(out), seed): seed for seed in seeds}
            for future in as_completed(futures):
                seed = futures[future]
                try:
                    results[seed] = future.result()
                except Exception as e:
                    logger.error(f"Seed {seed} failed: {e}")
                    results[seed] = {"seed": seed, "success": False, "message": str(e), "steps": 0}

    failed = [s for s in seeds if not results[s]["success"]]
    if failed:
        logger.warning(f"{len(failed)} of {len(seeds)} seeds failed: {failed}")
    return [results[s] for s in seeds]


# ============================================================================
# Evaluation
# ============================================================================

def evaluate_seed(
    config: ExperimentConfig,
    seed_dir: Path,
    seed: int,
    test: data_module.SyntheticDataset,
) -> MetricsReport:
    """Compute and write the metrics of one trained seed."""
    seed_dir = Path(seed_dir)
    status = read_json(seed_dir / "status.json") if (seed_dir / "status.json").exists() else {}
    if not status.get("success", False):
        report = MetricsReport(
            seed=seed,
            epochs=config.epochs,
            failed=True,
            message=status.get("message", "no training result"),
        )
        write_json(report.to_dict(), seed_dir / "metrics.json")
        return report

    model = Autoencoder.load_checkpoint(seed_dir / "checkpoint.npz")
    means = model.encode(test.inputs).mean
    active = active_variables(means)
    dto_result = dto(model.decoder, means, active, config.dto_samples)
    baseline = random_decoder_dto(model.decoder, means, active, seed=seed)
    trace = read_trace(seed_dir / "trace.csv")

    report = MetricsReport(
        seed=seed,
        epochs=config.epochs,
        dto=dto_result.value,
        dto_used=dto_result.used,
        dto_skipped=dto_result.skipped,
        dto_degenerate=dto_result.degenerate,
        disentanglement=disentanglement_score(means, test.factors, test.factor_kinds, seed=seed),
        delta_kl_trace=trace,
        polarized_fraction=polarized_fraction(trace, total_steps=int(status.get("steps", 0)) or None),
        active_set=active,
        random_decoder_dto=baseline.value,
        message=status.get("message", ""),
    )
    write_json(report.to_dict(), seed_dir / "metrics.json")
    return report


@measure_time
def run_metrics(config: ExperimentConfig, out: Path, seeds: Optional[Sequence[int]] = None) -> Dict[str, Any]:
    """
    Evaluate every seed of a run and write summary.json and summary.csv.

    Returns:
        Summary dictionary with the per-metric aggregates
    """
    seeds = list(seeds) if seeds is not None else list(config.seeds)
    run_dir = run_directory(config, out)
    _, _, test = dataset_splits(config, out)
    reports = [evaluate_seed(config, run_dir / str(s), s, test) for s in seeds]

    summary = aggregate_reports(reports)
    summary["name"] = config.name
    summary["model_kind"] = config.model_kind
    summary["beta"] = config.beta
    summary["epochs"] = config.epochs
    summary["loss_reduction"] = LOSS_REDUCTION
    write_json(summary, run_dir / "summary.json")
    write_csv_rows([r.summary_row() for r in reports if not r.failed], run_dir / "summary.csv", SUMMARY_FIELDS)
    return summary


# ============================================================================
# Sweeps and Reports
# ============================================================================

def write_plot_data(path: Path, xs: Sequence[float], ys: Sequence[Optional[float]]) -> Path:
    """Two whitespace-separated columns; rows with a missing value are dropped."""
    rows = [
        (x, y) for x, y in zip(xs, ys)
        if x is not None and y is not None and not (math.isnan(x) or math.isnan(y))
    ]
    path = Path(path)
    ensure_directory_exists(path.parent)
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in rows:
            fh.write(f"{x:.17g} {y:.17g}\n")
    return path


PLOT_SCRIPT_TEMPLATE = '''"""Plot the data files written next to this script."""

from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np

HERE = Path(__file__).parent
PLOTS = {plots!r}

fig, axes = plt.subplots(1, len(PLOTS), figsize=(5 * len(PLOTS), 4), squeeze=False)
for ax, (filename, xlabel, ylabel, logx, marker) in zip(axes[0], PLOTS):
    table = np.loadtxt(HERE / filename, ndmin=2)
    if table.size:
        ax.plot(table[:, 0], table[:, 1], "o-" if logx else "o")
    if logx:
        ax.set_xscale("log")
    if marker is not None:
        ax.axvline(marker, linestyle="--", color="gray")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
fig.tight_layout()
fig.savefig(HERE / "{image}")
'''


def write_plot_script(path: Path, plots: Sequence[Tuple[str, str, str, bool, Optional[float]]], image: str) -> Path:
    """Write a matplotlib script plotting (file, xlabel, ylabel, logx, marker) entries."""
    path = Path(path)
    ensure_directory_exists(path.parent)
    path.write_text(PLOT_SCRIPT_TEMPLATE.format(plots=list(plots), image=image), encoding="utf-8")
    return path


def run_beta_sweep(
    config: ExperimentConfig,
    betas: Sequence[float],
    out: Path,
    jobs: int = 1,
    seeds: Optional[Sequence[int]] = None,
) -> List[Dict[str, Any]]:
    """
    Train and evaluate one run per beta and tabulate the aggregates.

    Rows are marked 'overpruned' when fewer latents stay active than there
    are generating factors, and 'chosen' for the configured reference beta.

    Returns:
        One row per beta (see SWEEP_FIELDS)
    """
    if not betas:
        raise ValueError("beta sweep needs at least one beta")
    sweep_dir = ensure_directory_exists(run_directory(config, out))
    rows = []
    for beta in sorted(betas):
        # every sub-run regenerates the same dataset from the shared settings
        sub = config.with_overrides(name=f"{config.name}_beta{beta:g}", beta=float(beta))
        run_training(sub, out, seeds, jobs)
        summary = run_metrics(sub, out, seeds)
        factor_count = len(data_module.load_dataset(dataset_path(sub, out)).factor_kinds)
        active_mean = summary["active_count"]["mean"]
        rows.append({
            "beta": float(beta),
            "dto_mean": summary["dto"]["mean"],
            "dto_std": summary["dto"]["std"],
            "disent_mean": summary["disentanglement"]["mean"],
            "disent_std": summary["disentanglement"]["std"],
            "active_mean": active_mean,
            "overpruned": bool(not math.isnan(active_mean) and active_mean < factor_count),
            "chosen": config.reference_beta is not None and math.isclose(beta, config.reference_beta),
        })
        logger.info(f"beta={beta:g}: DtO {rows[-1]['dto_mean']:.3f}, Disent {rows[-1]['disent_mean']:.3f}")

    write_csv_rows(rows, sweep_dir / "sweep.csv", SWEEP_FIELDS)
    xs = [r["beta"] for r in rows]
    write_plot_data(sweep_dir / "sweep_dto.dat", xs, [r["dto_mean"] for r in rows])
    write_plot_data(sweep_dir / "sweep_disent.dat", xs, [r["disent_mean"] for r in rows])
    write_plot_script(
        sweep_dir / "plot_sweep.py",
        [
            ("sweep_disent.dat", "beta", "Disentanglement", True, config.reference_beta),
            ("sweep_dto.dat", "beta", "DtO", True, config.reference_beta),
        ],
        image="sweep.png",
    )
    return rows


def build_report(run_dirs: Sequence[Path], out: Path) -> Dict[str, Any]:
    """
    Collect summaries of several runs and correlate DtO with disentanglement.

    Writes report.json, the two-column file dto_vs_disent.dat and a plotting
    script into `out`.

    Returns:
        Dictionary with 'summaries' (name -> summary, plus a random-decoder
        row per run) and 'correlation'
    """
    out = ensure_directory_exists(out)
    summaries: Dict[str, Dict[str, Any]] = {}
    dtos: List[Optional[float]] = []
    disents: List[Optional[float]] = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        summary = read_json(run_dir / "summary.json")
        name = summary.get("name", run_dir.name)
        summaries[name] = summary
        summaries[f"{name} (random decoder)"] = {"dto": summary.get("random_decoder_dto", {})}
        for row in read_csv_rows(run_dir / "summary.csv"):
            dtos.append(float(row["dto"]) if row["dto"] else None)
            disents.append(float(row["disent"]) if row["disent"] else None)

    correlation = pearson_correlation(dtos, disents)
    write_plot_data(out / "dto_vs_disent.dat", dtos, disents)
    write_plot_script(
        out / "plot_report.py",
        [("dto_vs_disent.dat", "DtO", "Disentanglement", False, None)],
        image="dto_vs_disent.png",
    )
    report = {"summaries": summaries, "correlation": correlation}
    write_json(report, out / "report.json")
    return report


# ============================================================================
# Theory Check
# ============================================================================

def _check(name: str, passed: bool, residual: float, message: str = "") -> Dict[str, Any]:
    return {"name": name, "passed": bool(passed), "residual": float(residual), "message": message}


def _relative(value: float, expected: float) -> float:
    return abs(value - expected) / max(abs(expected), np.finfo(np.float64).tiny)


def check_worked_examples() -> List[Dict[str, Any]]:
    """Coefficients and optimal budget allocation of the two-column examples (C = 0)."""
    decoders = example_decoders()
    checks = []
    for name, coefficients, minimum in (
        ("M1", (50.0, 3.0), 2.0 * math.sqrt(150.0)),
        ("M2", (30.5, 22.5), 2.0 * math.sqrt(30.5 * 22.5)),
    ):
        m = decoders[name]
        coeff = column_norms(m) ** 2
        residual = max(_relative(c, e) for c, e in zip(coeff, coefficients))
        checks.append(_check(f"{name} loss coefficients", residual <= 1e-9, residual, f"{coeff.tolist()}"))
        _, value = optimal_sigmas(m, 0.0)
        residual = _relative(value, minimum)
        checks.append(_check(f"{name} optimal allocation", residual <= 1e-9, residual, f"minimum {value:.4f}"))
    return checks


def check_permutation_solver(count: int, rng: np.random.Generator) -> Dict[str, Any]:
    """Assignment-based search against full enumeration on random matrices."""
    worst = 0.0
    for _ in range(count):
        d = int(rng.integers(2, BRUTE_FORCE_MAX_DIM + 1))
        v = rng.uniform(-1.5, 1.5, size=(d, d))
        _, fast = nearest_signed_permutation(v)
        _, exact = brute_force_signed_permutation(v)
        worst = max(worst, abs(fast - exact))
    return _check("signed permutation search", worst <= 1e-9, worst, f"{count} matrices")


def check_local_improvement(problems: int, starts: int, rng: np.random.Generator) -> List[Dict[str, Any]]:
    """Local improvement from random starts reaches the bound with orthogonal columns."""
    worst_gap = 0.0
    worst_axes = 0
    tightness = 0.0
    for _ in range(problems):
        d = int(rng.integers(2, 6))
        n = int(rng.integers(d, 9))
        problem = IsolatedProblem.random(int(rng.integers(1, 11)), n, d, float(rng.normal()), rng)
        tightness = max(tightness, abs(problem_objective(problem, closed_form_optimum(problem)) - global_lower_bound(problem)))
        for _ in range(starts):
            certificate = improve_to_optimum(problem, random_assignment(problem, rng), tolerance=0.0)
            worst_gap = max(worst_gap, certificate.relative_gap)
            for j, v in zip(problem.jacobians, certificate.rotations):
                if axes_preserving_check(j @ v.T) != AXES_YES:
                    worst_axes += 1
    return [
        _check("closed-form optimum attains bound", tightness <= 1e-9, tightness),
        _check("local improvement reaches bound", worst_gap <= 1e-5, worst_gap, f"{problems}x{starts} runs"),
        _check("converged Jacobians axes-preserving", worst_axes == 0, worst_axes),
    ]


def check_lemmas(count: int, rng: np.random.Generator) -> List[Dict[str, Any]]:
    """Volume bound and the column-orthogonality equivalences on random matrices."""
    worst_volume = 0.0
    disagreements = 0
    attained = 0.0
    for _ in range(count):
        m = rng.standard_normal((4, 3))
        volume = psdet(m)
        v = random_orthogonal(3, rng)
        worst_volume = min(worst_volume, volume_bound_gap(m, v) / volume)
        flags = column_orthogonality_equivalence(m)
        q, _ = np.linalg.qr(rng.standard_normal((4, 3)))
        flags_orth = column_orthogonality_equivalence(q * rng.uniform(0.5, 2.0, 3))
        disagreements += len(set(flags.values())) - 1 + len(set(flags_orth.values())) - 1
        rotation, _ = orthogonalizing_rotation(m)
        attained = max(attained, abs(volume_bound_gap(m, rotation)) / volume)
    return [
        _check("volume bound holds", worst_volume >= -1e-12, -worst_volume),
        _check("volume bound attained by orthogonalizing rotation", attained <= 1e-9, attained),
        _check("orthogonality conditions agree", disagreements == 0, disagreements),
    ]


def check_rotation_invariance(count: int, rng: np.random.Generator) -> List[Dict[str, Any]]:
    """Full-covariance losses are rotation invariant; diagonal KL is not."""
    model = Autoencoder.build("beta_vae_full", 3, 3, hidden_sizes=(5,), activation="tanh", beta=0.5, rng=rng)
    x = rng.standard_normal((8, 3))
    worst = 0.0
    for _ in range(count):
        q = random_orthogonal(3, rng)
        rotated = apply_latent_rotation(model, q)
        noise = rng.standard_normal((8, 3))
        before = evaluate_losses(model, x, noise=noise)
        matched = rotate_noise(model.encode(x), rotated.encode(x), q, noise)
        after = evaluate_losses(rotated, x, noise=matched)
        worst = max(worst, abs(before.objective - after.objective), abs(before.kl - after.kl))

    post = GaussianPosterior(np.array([1.0, -0.5]), logvar=np.log(np.array([0.1, 2.0])))
    q45 = np.array([[1.0, -1.0], [1.0, 1.0]]) / math.sqrt(2.0)
    change = abs(kl_diagonal(diagonal_rotation_projection(post, q45)) - kl_diagonal(post))
    return [
        _check("full-covariance loss invariant under rotation", worst <= 1e-8, worst, f"{count} rotations"),
        _check("diagonal KL changes under rotation", change > 1e-3, change),
    ]


@measure_time
def run_theory_check(
    problems: int = 20,
    starts: int = 20,
    permutation_samples: int = 1000,
    seed: int = 0,
) -> List[Dict[str, Any]]:
    """
    Run the theory property suite.

    Returns:
        List of check dictionaries {name, passed, residual, message}
    """
    rng = make_rng(seed)
    checks = check_worked_examples()
    checks.append(check_permutation_solver(permutation_samples, rng))
    checks.extend(check_local_improvement(problems, starts, rng))
    checks.extend(check_lemmas(100, rng))
    checks.extend(check_rotation_invariance(20, rng))
    failed = [c["name"] for c in checks if not c["passed"]]
    if failed:
        logger.warning(f"Theory checks failed: {failed}")
    else:
        logger.info(f"All {len(checks)} theory checks passed")
    return checks
