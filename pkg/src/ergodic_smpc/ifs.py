"""State-dependent iterated function systems and their simulation.

A discrete IFS is a finite family of transformations together with a
state-dependent selection probability map; a continuous IFS is a single
parametrized transformation whose parameter is drawn from a
state-dependent distribution.  Both step the state forward one draw at a
time.  All randomness flows through explicitly keyed generators, so
trajectories and particle ensembles are bit-reproducible and independent
of scheduling order.
"""

from __future__ import annotations

import csv
import inspect
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .errors import (
    InvalidProbabilityError,
    NumericalBlowupError,
    ParameterDomainError,
)
from .ergodics import EmpiricalMeasure, histogram_from_samples
from .rng import make_rng

__all__ = [
    "DiscreteIFS",
    "ContinuousIFS",
    "Trajectory",
    "as_state",
    "evaluate_probs",
    "step_discrete",
    "step_continuous",
    "simulate",
    "run_ensemble",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

DEFAULT_DIVERGENCE_BOUND = 1e12

# Probability vectors off by at most this much are renormalized silently;
# larger deviations are treated as a bug in the probability map.
_PROB_SUM_TOL = 1e-9
_PROB_NEG_TOL = 1e-12


def as_state(x, dim: int | None = None) -> np.ndarray:
    """Validate and return a finite 1-D float state vector."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("state must be a 1-D vector with at least one entry")
    if not np.all(np.isfinite(arr)):
        raise NumericalBlowupError(f"state contains non-finite entries: {arr}")
    if dim is not None and arr.size != dim:
        raise ValueError(f"state has dimension {arr.size}, expected {dim}")
    return arr


def _accepts_rng(fn: Callable) -> bool:
    """True when a map takes the step generator as a second argument."""
    try:
        params = list(inspect.signature(fn).parameters.values())
    except (TypeError, ValueError):
        return False
    positional = [p for p in params
                  if p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD)]
    if any(p.kind == p.VAR_POSITIONAL for p in params):
        return True
    return len(positional) >= 2


@dataclass(frozen=True)
class DiscreteIFS:
    """Finite map family with state-dependent selection probabilities.

    ``probs(x)`` must return a probability vector of length ``n_maps``.
    Maps are either pure transformations ``S(x)`` or noise-carrying
    transformations ``S(x, rng)`` drawing from the step generator.
    """

    maps: tuple[Callable, ...]
    probs: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        maps = tuple(self.maps)
        if not maps:
            raise ValueError("an IFS needs at least one map")
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "_rng_aware", tuple(_accepts_rng(m) for m in maps))

    @property
    def n_maps(self) -> int:
        return len(self.maps)

    def map_accepts_rng(self, index: int) -> bool:
        return self._rng_aware[index]

    def apply_map(self, index: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self._rng_aware[index]:
            return self.maps[index](x, rng)
        return self.maps[index](x)


@dataclass(frozen=True)
class ContinuousIFS:
    """Parametrized transformation with a state-dependent parameter draw.

    ``sampler(x, rng)`` draws a parameter t distributed per the system's
    selection density at x; ``map(t, x)`` is then deterministic.  An
    explicit ``density(t, x)`` over scalar t in ``param_range`` is only
    required by the stopping-time check.  ``param_check(t)`` optionally
    guards the sampler's output domain.
    """

    map: Callable[[Any, np.ndarray], np.ndarray]
    sampler: Callable[[np.ndarray, np.random.Generator], Any]
    density: Callable[[float, np.ndarray], float] | None = None
    param_check: Callable[[Any], bool] | None = None
    param_range: tuple[float, float] | None = None

    def validate_density(self, x, tol: float = 1e-6) -> float:
        """Quadrature check that the density at x integrates to one."""
        from scipy.integrate import quad

        if self.density is None or self.param_range is None:
            raise ValueError("validate_density requires density and param_range")
        x = as_state(x)
        total, _ = quad(lambda t: self.density(t, x), *self.param_range, limit=200)
        if abs(total - 1.0) > tol:
            raise InvalidProbabilityError(
                f"density at {x} integrates to {total!r}, not 1 within {tol}")
        return float(total)


@dataclass
class Trajectory:
    """Simulated path: states (n_steps+1, d) plus the selections taken."""

    states: np.ndarray
    seed: int | None = None
    selections: list | None = None

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.states.shape[1]


def evaluate_probs(ifs: DiscreteIFS, x: np.ndarray) -> np.ndarray:
    """Evaluate and validate the selection probabilities at x."""
    p = np.asarray(ifs.probs(x), dtype=float).ravel()
    if p.size != ifs.n_maps:
        raise InvalidProbabilityError(
            f"probability map returned {p.size} entries for {ifs.n_maps} maps")
    if not np.all(np.isfinite(p)):
        raise InvalidProbabilityError(f"non-finite probabilities at {x}: {p}")
    if p.min() < -_PROB_NEG_TOL:
        raise InvalidProbabilityError(f"negative probability at {x}: {p}")
    p = np.maximum(p, 0.0)
    total = p.sum()
    if abs(total - 1.0) > _PROB_SUM_TOL:
        raise InvalidProbabilityError(
            f"probabilities at {x} sum to {total!r}, outside 1 +/- {_PROB_SUM_TOL}")
    return p / total


def _sample_index(p: np.ndarray, rng: np.random.Generator) -> int:
    # Inverse CDF with ties broken toward the lower index; u in (0, 1] so
    # zero-probability maps are never selected.
    cum = np.cumsum(p)
    cum[-1] = 1.0
    u = 1.0 - rng.random()
    return int(np.searchsorted(cum, u, side="left"))


def step_discrete(ifs: DiscreteIFS, x, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Advance one step: select a map from probs(x), apply it to x."""
    x = as_state(x)
    p = evaluate_probs(ifs, x)
    index = _sample_index(p, rng)
    out = np.asarray(ifs.apply_map(index, x, rng), dtype=float)
    out = np.atleast_1d(out)
    if not np.all(np.isfinite(out)):
        raise NumericalBlowupError(f"map {index} produced non-finite output at {x}")
    return out, index


def step_continuous(ifs: ContinuousIFS, x, rng: np.random.Generator) -> tuple[np.ndarray, Any]:
    """Advance one step: draw the parameter at x, apply the map."""
    x = as_state(x)
    t = ifs.sampler(x, rng)
    if ifs.param_check is not None and not ifs.param_check(t):
        raise ParameterDomainError(f"sampled parameter {t!r} outside the parameter space")
    out = np.atleast_1d(np.asarray(ifs.map(t, x), dtype=float))
    if not np.all(np.isfinite(out)):
        raise NumericalBlowupError(f"map produced non-finite output at {x}")
    return out, t


def _step(ifs, x, rng):
    if isinstance(ifs, DiscreteIFS):
        return step_discrete(ifs, x, rng)
    if isinstance(ifs, ContinuousIFS):
        return step_continuous(ifs, x, rng)
    raise TypeError(f"not an IFS: {type(ifs).__name__}")


def simulate(ifs, x0, n_steps: int, seed: int,
             divergence_bound: float = DEFAULT_DIVERGENCE_BOUND) -> Trajectory:
    """Iterate the IFS from x0 for n_steps with a dedicated generator.

    Identical (ifs, x0, n_steps, seed) calls return bit-identical
    trajectories.  Step failures propagate with the step index attached;
    states whose norm exceeds ``divergence_bound`` abort the run.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    x = as_state(x0)
    rng = make_rng(seed)
    states = np.empty((n_steps + 1, x.size))
    states[0] = x
    selections: list = []
    for k in range(n_steps):
        try:
            x, choice = _step(ifs, x, rng)
        except (InvalidProbabilityError, NumericalBlowupError, ParameterDomainError) as exc:
            raise type(exc)(f"step {k}: {exc}") from exc
        norm = float(np.linalg.norm(x))
        if norm > divergence_bound:
            raise NumericalBlowupError(
                f"step {k}: state norm {norm:.6e} exceeded divergence bound "
                f"{divergence_bound:.6e}")
        if x.size != states.shape[1]:
            raise ValueError(f"step {k}: map changed the state dimension")
        states[k + 1] = x
        selections.append(choice)
    return Trajectory(states=states, seed=seed, selections=selections)


def run_ensemble(ifs, initial_measure, n_steps: int, seed: int,
                 n_bins: int = 10, range_=None,
                 divergence_bound: float = DEFAULT_DIVERGENCE_BOUND) -> EmpiricalMeasure:
    """Advance a particle ensemble and histogram the final positions.

    Each particle gets its own (seed, particle id) stream, so the result
    does not depend on evaluation order and the particle count is
    preserved in the returned measure.
    """
    particles = [as_state(p) for p in initial_measure]
    if not particles:
        raise ValueError("initial_measure must contain at least one particle")
    dim = particles[0].size
    finals = np.empty((len(particles), dim))
    for i, x in enumerate(particles):
        if x.size != dim:
            raise ValueError("all particles must share one dimension")
        rng = make_rng(seed, i)
        for k in range(n_steps):
            try:
                x, _ = _step(ifs, x, rng)
            except (InvalidProbabilityError, NumericalBlowupError, ParameterDomainError) as exc:
                raise type(exc)(f"particle {i}, step {k}: {exc}") from exc
            norm = float(np.linalg.norm(x))
            if norm > divergence_bound:
                raise NumericalBlowupError(
                    f"particle {i}, step {k}: state norm {norm:.6e} exceeded "
                    f"divergence bound {divergence_bound:.6e}")
        finals[i] = x
    return histogram_from_samples(finals, n_bins=n_bins, range_=range_)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Write ``k,x0,...,x{d-1},choice`` rows, floats at 17 significant digits.

    The choice column records the selection that produced state k (blank
    for k = 0 and for non-scalar selections such as composite noise
    parameters).
    """
    d = traj.dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k"] + [f"x{j}" for j in range(d)] + ["choice"])
        for k in range(traj.states.shape[0]):
            row = [str(k)] + [format(v, ".17g") for v in traj.states[k]]
            choice = ""
            if k > 0 and traj.selections is not None:
                sel = traj.selections[k - 1]
                if isinstance(sel, (int, np.integer)):
                    choice = str(int(sel))
                elif isinstance(sel, (float, np.floating)):
                    choice = format(float(sel), ".17g")
            writer.writerow(row + [choice])


def read_trajectory_csv(path) -> Trajectory:
    """Parse a trajectory CSV back into a Trajectory (seed unknown)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "k" or header[-1] != "choice":
            raise ValueError(f"unexpected trajectory header: {header}")
        d = len(header) - 2
        states = []
        selections: list = []
        for row in reader:
            states.append([float(v) for v in row[1:1 + d]])
            raw = row[-1]
            if raw == "":
                selections.append(None)
            else:
                try:
                    selections.append(int(raw))
                except ValueError:
                    selections.append(float(raw))
    selections = selections[1:]  # the k = 0 row carries no selection
    sel = None if all(s is None for s in selections) else selections
    return Trajectory(states=np.asarray(states, dtype=float), seed=None, selections=sel)
