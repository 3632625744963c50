"""Experiment orchestration: trials, artifact emission, summaries.

A trial generates a problem instance, checks its contraction conditions,
simulates the closed loop, and writes every artifact (problem, reports,
trajectory, histograms, plot data) under its own directory.  Trials are
keyed by (master seed, trial id) substreams and files are written
atomically, so output trees are byte-identical across reruns and across
worker counts.
"""

from __future__ import annotations

import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .conditions import (
    ConditionReport,
    DomainBox,
    check_average_contraction,
    check_linear_sufficient_condition,
)
from .ergodics import (
    DiagnosticReport,
    build_histogram,
    stationarity_diagnostic,
    write_histogram_csv,
)
from .ifs import simulate, write_trajectory_csv
from .rng import derive_seed
from .smpc import (
    GenerationSpec,
    MPCProblem,
    closed_loop_fixed_point,
    extreme_noise_closed_loop_ifs,
    generate_problem,
    smpc_closed_loop_ifs,
)

__all__ = [
    "ExperimentConfig",
    "TrialResult",
    "atomic_write_text",
    "atomic_write_with",
    "check_problem",
    "emit_run_artifacts",
    "simulate_and_report",
    "run_trial",
    "run_experiment",
]

# Sampling box for the per-trial average-contraction check; generated
# instances keep their states well inside it.
_CHECK_BOX = (-1.0, 2.0)

# Number of rows targeted in the per-state plot-data files.
_FIGURE_ROWS = 200


@dataclass(frozen=True)
class ExperimentConfig:
    """Experiment-defining parameters (everything that shapes the outputs)."""

    n_trials: int = 20
    n_iterations: int = 10_000
    saa_samples: int = 100
    n_bins: int = 10
    n_windows: int = 4
    tolerance: float = 0.05
    burn_in_frac: float = 0.1
    seed: int = 0
    generation: GenerationSpec = field(default_factory=GenerationSpec.default)
    x0: tuple[float, ...] | None = None
    check_points: int = 128
    check_pairs: int = 400

    def __post_init__(self):
        for name in ("n_trials", "n_iterations", "saa_samples", "n_bins",
                     "n_windows", "check_points", "check_pairs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))

    def smoke(self) -> "ExperimentConfig":
        """CI-scale variant: one short trial with few SAA samples."""
        return replace(self, n_trials=1, n_iterations=1000, saa_samples=20)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["generation"] = self.generation.to_dict()
        data["x0"] = list(self.x0) if self.x0 is not None else None
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        if "generation" in data:
            data["generation"] = GenerationSpec.from_dict(data["generation"])
        if data.get("x0") is not None:
            data["x0"] = tuple(data["x0"])
        return cls(**data)


@dataclass
class TrialResult:
    """Per-trial outcome with relative paths to every emitted artifact."""

    trial_id: int
    directory: str
    problem_path: str | None = None
    conditions_path: str | None = None
    trajectory_path: str | None = None
    histogram_path: str | None = None
    figure_paths: list[str] = field(default_factory=list)
    diagnostic_path: str | None = None
    analytic_pass: bool | None = None
    sampled_pass: bool | None = None
    bound: float | None = None
    lambda_hat: float | None = None
    stabilizing: bool | None = None
    tv_last: list[float] | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file and rename so partial runs never corrupt files."""
    atomic_write_with(lambda tmp: Path(tmp).write_text(text), path)


def atomic_write_with(writer: Callable, path) -> None:
    """Run ``writer(tmp_path)`` then rename the temp file onto ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _bin_indices(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    # Same convention as np.histogram: interior edges belong to the right
    # bin, the maximum to the last bin.
    clipped = np.clip(values, edges[0], edges[-1])
    return np.clip(np.searchsorted(edges[1:-1], clipped, side="right"),
                   0, len(edges) - 2)


def _write_figure_csv(path, states_j: np.ndarray, edges: np.ndarray) -> None:
    """Cumulative per-bin proportions of one state at checkpoint iterations."""
    n = states_j.shape[0]
    n_bins = len(edges) - 1
    stride = max(1, n // _FIGURE_ROWS)
    checkpoints = list(range(stride, n + 1, stride))
    if checkpoints[-1] != n:
        checkpoints.append(n)
    idx = _bin_indices(states_j, edges)
    counts = np.zeros(n_bins, dtype=np.int64)
    rows = []
    prev = 0
    for k in checkpoints:
        counts += np.bincount(idx[prev:k], minlength=n_bins)
        prev = k
        rows.append([str(k)] + [format(c / k, ".17g") for c in counts])
    lines = [",".join(["k"] + [f"bin_{b}" for b in range(n_bins)])]
    lines += [",".join(r) for r in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def emit_run_artifacts(traj, out_dir, *, n_bins: int, n_windows: int,
                       tolerance: float, burn_in_frac: float) -> dict:
    """Write the standard artifact set for one simulated trajectory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traj_path = out_dir / "trajectory.csv"
    atomic_write_with(lambda tmp: write_trajectory_csv(traj, tmp), traj_path)
    measure = build_histogram(traj, n_bins=n_bins)
    hist_path = out_dir / "histogram.csv"
    atomic_write_with(lambda tmp: write_histogram_csv(measure, tmp), hist_path)
    figure_paths = []
    for j in range(traj.dim):
        fig_path = out_dir / f"figure_state{j}.csv"
        _write_figure_csv(fig_path, traj.states[:, j], measure.edges[j])
        figure_paths.append(fig_path)
    report = stationarity_diagnostic(traj, n_windows=n_windows, n_bins=n_bins,
                                     tolerance=tolerance, burn_in_frac=burn_in_frac)
    diag_path = out_dir / "diagnostic.json"
    atomic_write_text(diag_path, report.to_json() + "\n")
    return {
        "trajectory": traj,
        "measure": measure,
        "diagnostic": report,
        "paths": {
            "trajectory": traj_path,
            "histogram": hist_path,
            "figures": figure_paths,
            "diagnostic": diag_path,
        },
    }


def simulate_and_report(problem: MPCProblem, out_dir, *, n_iterations: int,
                        saa_samples: int, n_bins: int, n_windows: int,
                        tolerance: float, burn_in_frac: float, seed: int,
                        x0=None) -> dict:
    """Run the closed loop and emit trajectory, histograms, and diagnostic.

    The initial state defaults to the noise-free closed-loop fixed point,
    so the run samples stationary behavior rather than one long transient.
    """
    if x0 is None:
        x0 = closed_loop_fixed_point(problem)
    loop = smpc_closed_loop_ifs(problem, saa_samples)
    traj = simulate(loop, x0, n_iterations, seed)
    return emit_run_artifacts(traj, out_dir, n_bins=n_bins, n_windows=n_windows,
                              tolerance=tolerance, burn_in_frac=burn_in_frac)


def check_problem(problem: MPCProblem, seed: int, n_points: int = 128,
                  n_pairs: int = 400) -> tuple[ConditionReport, ConditionReport]:
    """Analytic contraction bound plus sampled check of the extreme-noise loop."""
    analytic = check_linear_sufficient_condition(problem)
    box = DomainBox.cube(_CHECK_BOX[0], _CHECK_BOX[1], problem.d)
    sampled = check_average_contraction(
        extreme_noise_closed_loop_ifs(problem), box,
        n_points=n_points, n_pairs=n_pairs, seed=seed)
    return analytic, sampled


def run_trial(config: ExperimentConfig, trial_id: int, out_root) -> TrialResult:
    """Generate, check, and simulate one trial under its own directory."""
    trial_dir = Path(out_root) / f"trial_{trial_id:03d}"
    trial_dir.mkdir(parents=True, exist_ok=True)
    result = TrialResult(trial_id=trial_id, directory=trial_dir.name)
    try:
        problem = generate_problem(config.generation,
                                   seed=derive_seed(config.seed, trial_id, 0))
        atomic_write_text(trial_dir / "problem.json", problem.to_json() + "\n")
        result.problem_path = f"{trial_dir.name}/problem.json"

        analytic, sampled = check_problem(
            problem, seed=derive_seed(config.seed, trial_id, 1),
            n_points=config.check_points, n_pairs=config.check_pairs)
        combined = {"linear_sufficient": analytic.to_dict(),
                    "average_contraction": sampled.to_dict()}
        atomic_write_text(trial_dir / "conditions.json",
                          json.dumps(combined, indent=2) + "\n")
        result.conditions_path = f"{trial_dir.name}/conditions.json"
        result.analytic_pass = analytic.passed
        result.sampled_pass = sampled.passed
        result.bound = analytic.constants["bound"]
        result.lambda_hat = sampled.constants["lambda_hat"]

        run = simulate_and_report(
            problem, trial_dir,
            n_iterations=config.n_iterations, saa_samples=config.saa_samples,
            n_bins=config.n_bins, n_windows=config.n_windows,
            tolerance=config.tolerance, burn_in_frac=config.burn_in_frac,
            seed=derive_seed(config.seed, trial_id, 2),
            x0=config.x0)
        result.trajectory_path = f"{trial_dir.name}/trajectory.csv"
        result.histogram_path = f"{trial_dir.name}/histogram.csv"
        result.figure_paths = [f"{trial_dir.name}/{p.name}" for p in run["paths"]["figures"]]
        result.diagnostic_path = f"{trial_dir.name}/diagnostic.json"
        diag: DiagnosticReport = run["diagnostic"]
        result.stabilizing = diag.verdict == "stabilizing"
        result.tv_last = [float(v) for v in diag.distances[-1]]
    except Exception as exc:  # trial failures are recorded, not fatal
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def _trial_worker(config: ExperimentConfig, trial_id: int, out_root: str) -> TrialResult:
    return run_trial(config, trial_id, out_root)


def _write_summary_csv(path, results: list[TrialResult], d: int) -> None:
    header = (["trial", "status", "analytic", "sampled", "bound", "lambda_hat",
               "stabilizing"] + [f"tv_last_{j}" for j in range(d)] + ["error"])
    lines = [",".join(header)]
    for res in results:
        if res.ok:
            row = [str(res.trial_id), "ok",
                   "pass" if res.analytic_pass else "fail",
                   "pass" if res.sampled_pass else "fail",
                   format(res.bound, ".17g"), format(res.lambda_hat, ".17g"),
                   "stabilizing" if res.stabilizing else "not-stabilizing"]
            row += [format(v, ".17g") for v in res.tv_last]
            row += [""]
        else:
            row = ([str(res.trial_id), "failed"] + [""] * (5 + d)
                   + [res.error.replace(",", ";")])
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def run_experiment(config: ExperimentConfig, out_dir, workers: int = 1) -> list[TrialResult]:
    """Run every trial, then write config, summary table, and manifest.

    Trial directories and file contents depend only on the config, never
    on the worker count or the output location.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "config.json",
                      json.dumps(config.to_dict(), indent=2) + "\n")
    trial_ids = list(range(config.n_trials))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_trial_worker, config, t, str(out_dir))
                       for t in trial_ids]
            results = [f.result() for f in futures]
    else:
        results = [run_trial(config, t, out_dir) for t in trial_ids]
    results.sort(key=lambda r: r.trial_id)

    _write_summary_csv(out_dir / "summary.csv", results, config.generation.d)
    manifest = {
        "n_trials": config.n_trials,
        "representative_trial": 0,
        "trials": [{"id": r.trial_id, "dir": r.directory,
                    "status": "ok" if r.ok else "failed", "error": r.error}
                   for r in results],
        "failures": [r.trial_id for r in results if not r.ok],
    }
    atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return results
