"""Explicit-Euler integration of velocity fields.

All three samplers step through time grids built by one shared routine, so
splitting an interval (teacher sub-solves, piecewise window sampling) lands on
bitwise-identical grid points and states as one merged integration whenever
the window endpoints are dyadic (power-of-two window counts).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numcore import NonFiniteError, VelocityModel, as_tensor2, forward

__all__ = [
    "TrajectoryRecord",
    "euler_sample",
    "teacher_solve",
    "piecewise_sample",
    "as_field",
    "time_grid",
]

Field = Callable[[np.ndarray, float], np.ndarray]


@dataclass
class TrajectoryRecord:
    """Per-step snapshots of one integration pass.

    ``states`` has one entry per grid point, ``velocities`` one per step
    (evaluated at the step's left endpoint).
    """

    times: np.ndarray  # (n_steps + 1,)
    states: np.ndarray  # (n_steps + 1, batch, dim)
    velocities: np.ndarray  # (n_steps, batch, dim)

    def __post_init__(self) -> None:
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if len(self.states) != len(self.times) or len(self.velocities) != len(self.times) - 1:
            raise ValueError(
                f"inconsistent record lengths: {len(self.times)} times, "
                f"{len(self.states)} states, {len(self.velocities)} velocities"
            )


def as_field(model_or_field) -> Field:
    """Adapt a VelocityModel (or pass through any (z, t) -> v callable)."""
    if isinstance(model_or_field, VelocityModel):
        model = model_or_field

        def field(z: np.ndarray, t: float) -> np.ndarray:
            return forward(model, z, np.full(z.shape[0], t))

        return field
    if callable(model_or_field):
        return model_or_field
    raise TypeError(f"expected a VelocityModel or callable, got {type(model_or_field)!r}")


def time_grid(t_a: float, t_b: float, n_steps: int) -> np.ndarray:
    """n_steps+1 points from t_a to t_b with exact endpoints.

    Interior points use (t_a*(n-j) + t_b*j)/n, which for dyadic endpoints
    rounds identically to the merged-grid formula j'/n' — the bitwise
    step-grid equivalence the piecewise sampler relies on.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    j = np.arange(n_steps + 1, dtype=np.float64)
    grid = (t_a * (n_steps - j) + t_b * j) / n_steps
    grid[0] = t_a
    grid[-1] = t_b
    return grid


def _integrate(
    field: Field, z0: np.ndarray, times: np.ndarray, record: bool
) -> tuple[np.ndarray, TrajectoryRecord | None]:
    z = z0.copy()
    states = [z0.copy()] if record else None
    velocities = [] if record else None
    for i in range(len(times) - 1):
        v = field(z, float(times[i]))
        v = as_tensor2(v, "velocity")
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(
                f"non-finite velocity at step {i} (t={times[i]!r})"
            )
        z = z + (times[i + 1] - times[i]) * v
        if not np.all(np.isfinite(z)):
            raise NonFiniteError(f"non-finite state at step {i} (t={times[i]!r})")
        if record:
            states.append(z.copy())
            velocities.append(v)
    rec = None
    if record:
        rec = TrajectoryRecord(
            times=np.asarray(times, dtype=np.float64),
            states=np.stack(states),
            velocities=np.stack(velocities),
        )
    return z, rec


def euler_sample(model_or_field, n_steps: int, z0, record: bool = False):
    """Integrate dz/dt = v(z, t) from t=0 to t=1 with uniform explicit Euler.

    Returns the final state, or ``(final, TrajectoryRecord)`` when
    ``record`` is set.
    """
    z0 = as_tensor2(z0, "z0")
    field = as_field(model_or_field)
    final, rec = _integrate(field, z0, time_grid(0.0, 1.0, n_steps), record)
    if record:
        return final, rec
    return final


def teacher_solve(model_or_field, z_a, t_a: float, t_b: float, n_steps: int) -> np.ndarray:
    """Euler integration restricted to [t_a, t_b] with n_steps uniform sub-steps."""
    if not (0.0 <= t_a < t_b <= 1.0):
        raise ValueError(f"need 0 <= t_a < t_b <= 1, got t_a={t_a}, t_b={t_b}")
    z_a = as_tensor2(z_a, "z_a")
    field = as_field(model_or_field)
    final, _ = _integrate(field, z_a, time_grid(t_a, t_b, n_steps), record=False)
    return final


def piecewise_sample(model_or_field, schedule, steps_per_window: int, z0) -> np.ndarray:
    """Integrate window by window; steps_per_window=1 gives K-step sampling."""
    if steps_per_window < 1:
        raise ValueError(f"steps_per_window must be >= 1, got {steps_per_window}")
    z = as_tensor2(z0, "z0").copy()
    field = as_field(model_or_field)
    ends = schedule.endpoints
    for k in range(len(ends) - 1):
        grid = time_grid(float(ends[k]), float(ends[k + 1]), steps_per_window)
        z, _ = _integrate(field, z, grid, record=False)
    return z
