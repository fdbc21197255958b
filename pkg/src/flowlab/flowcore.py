"""Core training machinery: interpolation paths, windowed velocity targets,
the direction-weighted (aligned) loss, coupling construction through a frozen
teacher, and the progressive window-halving training engine.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore
from .numcore import (
    NonFiniteError,
    ShapeError,
    VelocityModel,
    as_tensor2,
    as_vector,
    check_finite,
)
from .sampler import teacher_solve

__all__ = [
    "WindowSchedule",
    "LossConfig",
    "CouplingBatch",
    "StagePlan",
    "LossTrace",
    "StageResult",
    "TrainingDivergence",
    "interpolate",
    "window_interpolate",
    "window_target_velocity",
    "aligned_loss",
    "aligned_loss_terms",
    "build_window_targets",
    "halve_schedule",
    "train_stage",
    "progressive_train",
]

DIVERGENCE_LOSS_LIMIT = 1e6


class TrainingDivergence(RuntimeError):
    """Training loss blew up or went non-finite; carries stage diagnostics."""


@dataclass(frozen=True)
class WindowSchedule:
    """Ordered time endpoints 0 = t_0 < ... < t_K = 1 defining K windows."""

    endpoints: np.ndarray

    def __post_init__(self) -> None:
        ends = np.asarray(self.endpoints, dtype=np.float64)
        object.__setattr__(self, "endpoints", ends)
        if ends.ndim != 1 or len(ends) < 2:
            raise ValueError(f"need at least 2 endpoints, got shape {ends.shape}")
        if ends[0] != 0.0 or ends[-1] != 1.0:
            raise ValueError(f"endpoints must start at 0 and end at 1, got {ends}")
        if np.any(np.diff(ends) <= 0):
            raise ValueError(f"endpoints must be strictly increasing, got {ends}")

    @property
    def n_windows(self) -> int:
        return len(self.endpoints) - 1

    @classmethod
    def uniform(cls, n_windows: int) -> "WindowSchedule":
        if n_windows < 1:
            raise ValueError(f"n_windows must be >= 1, got {n_windows}")
        return cls(np.arange(n_windows + 1, dtype=np.float64) / n_windows)

    def locate(self, t) -> np.ndarray:
        """Window index containing each t (right-closed only at t=1)."""
        t = as_vector(t, "t")
        if t.size and (t.min() < 0.0 or t.max() > 1.0):
            raise ValueError(f"t entries must lie in [0, 1], got [{t.min()}, {t.max()}]")
        idx = np.searchsorted(self.endpoints, t, side="right") - 1
        return np.clip(idx, 0, self.n_windows - 1)


def halve_schedule(schedule: WindowSchedule) -> WindowSchedule:
    """Merge adjacent window pairs by keeping every second endpoint."""
    if schedule.n_windows % 2 != 0:
        raise ValueError(
            f"cannot halve an odd window count ({schedule.n_windows})"
        )
    return WindowSchedule(schedule.endpoints[::2].copy())


@dataclass(frozen=True)
class LossConfig:
    """Blend weight between magnitude (MSE) and direction (cosine) terms."""

    alpha: float = 0.1
    cosine_epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not self.cosine_epsilon > 0.0:
            raise ValueError(f"cosine_epsilon must be > 0, got {self.cosine_epsilon}")


@dataclass
class CouplingBatch:
    """Per-sample window endpoint pairs used as velocity regression targets."""

    z_start: np.ndarray
    t_start: np.ndarray
    z_end: np.ndarray
    t_end: np.ndarray
    window_index: np.ndarray

    def __post_init__(self) -> None:
        self.z_start = as_tensor2(self.z_start, "z_start")
        self.z_end = as_tensor2(self.z_end, "z_end")
        self.t_start = as_vector(self.t_start, "t_start")
        self.t_end = as_vector(self.t_end, "t_end")
        self.window_index = np.asarray(self.window_index)
        n = len(self.z_start)
        for name in ("z_end", "t_start", "t_end", "window_index"):
            if len(getattr(self, name)) != n:
                raise ShapeError(f"{name} length does not match batch size {n}")
        if self.z_end.shape != self.z_start.shape:
            raise ShapeError(
                f"z_end shape {self.z_end.shape} != z_start shape {self.z_start.shape}"
            )
        if np.any(self.t_end <= self.t_start):
            bad = int(np.argmax(self.t_end <= self.t_start))
            raise ValueError(
                f"sample {bad}: window [{self.t_start[bad]}, {self.t_end[bad]}] "
                "has non-positive width"
            )

    def __len__(self) -> int:
        return len(self.z_start)


@dataclass(frozen=True)
class StagePlan:
    """Stage-wise training budget: window counts halve stage over stage."""

    window_counts: tuple[int, ...] = (8, 4, 2)
    iterations_per_stage: int = 10_000
    batch_size: int = 256
    teacher_total_steps: int = 32

    def __post_init__(self) -> None:
        counts = tuple(int(k) for k in self.window_counts)
        object.__setattr__(self, "window_counts", counts)
        if not counts:
            raise ValueError("window_counts must not be empty")
        if any(k < 1 for k in counts):
            raise ValueError(f"window counts must be >= 1, got {counts}")
        for prev, cur in zip(counts[:-1], counts[1:]):
            if prev != 2 * cur:
                raise ValueError(
                    f"window counts must halve stage over stage, got {prev} -> {cur}"
                )
        if self.iterations_per_stage < 1:
            raise ValueError(f"iterations_per_stage must be >= 1, got {self.iterations_per_stage}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        for k in counts:
            if self.teacher_total_steps % k != 0:
                raise ValueError(
                    f"teacher_total_steps={self.teacher_total_steps} is not divisible "
                    f"by window count {k}"
                )


def interpolate(z0, z1, t) -> np.ndarray:
    """Rowwise linear path t*z1 + (1-t)*z0 (z0 at t=0, z1 at t=1)."""
    z0 = as_tensor2(z0, "z0")
    z1 = as_tensor2(z1, "z1")
    if z0.shape != z1.shape:
        raise ShapeError(f"z0 shape {z0.shape} != z1 shape {z1.shape}")
    t = as_vector(t, "t")
    if t.shape[0] == 1 and z0.shape[0] != 1:
        t = np.full(z0.shape[0], t[0])
    if t.shape[0] != z0.shape[0]:
        raise ShapeError(f"t has length {t.shape[0]} but z0 has {z0.shape[0]} rows")
    if t.size and (t.min() < 0.0 or t.max() > 1.0):
        raise ValueError(f"t entries must lie in [0, 1], got [{t.min()}, {t.max()}]")
    tc = t[:, None]
    return tc * z1 + (1.0 - tc) * z0


def window_interpolate(batch: CouplingBatch, t) -> np.ndarray:
    """Position inside each sample's window at time t.

    Uses the in-window fraction (t - t_start)/(t_end - t_start), so the
    window endpoints reproduce z_start/z_end bitwise.
    """
    t = as_vector(t, "t")
    if t.shape[0] != len(batch):
        raise ShapeError(f"t has length {t.shape[0]} but batch has {len(batch)} samples")
    below = t < batch.t_start
    above = t > batch.t_end
    if np.any(below | above):
        bad = int(np.argmax(below | above))
        raise ValueError(
            f"sample {bad}: t={t[bad]} outside its window "
            f"[{batch.t_start[bad]}, {batch.t_end[bad]}]"
        )
    frac = (t - batch.t_start) / (batch.t_end - batch.t_start)
    fc = frac[:, None]
    return fc * batch.z_end + (1.0 - fc) * batch.z_start


def window_target_velocity(batch: CouplingBatch) -> np.ndarray:
    """Per-sample window slope (z_end - z_start)/(t_end - t_start).

    With a single full-interval window this reduces to z_end - z_start,
    the classic data-minus-noise target.
    """
    dt = batch.t_end - batch.t_start
    if np.any(dt <= 0):
        bad = int(np.argmax(dt <= 0))
        raise ValueError(f"sample {bad}: zero-width window at t={batch.t_start[bad]}")
    return (batch.z_end - batch.z_start) / dt[:, None]


def aligned_loss_terms(
    pred, target, cfg: LossConfig
) -> tuple[float, np.ndarray, float, float]:
    """Aligned loss value, gradient w.r.t. pred, and its two terms.

    loss = (1-alpha) * mean((pred-target)^2)            [over all elements]
         + alpha * (1 - mean_i cos(pred_i, target_i))   [per-sample cosine]

    The cosine denominator ||p||*||v|| is floored by cfg.cosine_epsilon so
    degenerate zero-velocity targets stay finite.
    """
    pred = as_tensor2(pred, "pred")
    target = as_tensor2(target, "target")
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}")
    n, dim = pred.shape
    diff = pred - target
    mse = float(np.mean(diff * diff))

    dots = np.sum(pred * target, axis=1)
    p_sq = np.sum(pred * pred, axis=1)
    v_sq = np.sum(target * target, axis=1)
    # sqrt(p_sq * v_sq) rather than ||p||*||v||: for pred == target this
    # collapses to p_sq exactly, making the cosine exactly 1.
    norm_prod = np.sqrt(p_sq * v_sq)
    denom = np.maximum(norm_prod, cfg.cosine_epsilon)
    cos = dots / denom
    cos_term = 1.0 - float(np.mean(cos))

    loss = (1.0 - cfg.alpha) * mse + cfg.alpha * cos_term

    dmse = (2.0 / (n * dim)) * diff
    floored = norm_prod <= cfg.cosine_epsilon
    inv = 1.0 / denom
    dcos = target * inv[:, None]
    scale = np.where(floored, 0.0, dots * v_sq * inv**3)
    dcos -= pred * scale[:, None]
    dpred = (1.0 - cfg.alpha) * dmse - (cfg.alpha / n) * dcos
    return loss, dpred, mse, cos_term


def aligned_loss(pred, target, cfg: LossConfig) -> float:
    """Scalar aligned loss; alpha=0 degenerates to plain MSE."""
    return aligned_loss_terms(pred, target, cfg)[0]


def aligned_loss_evaluator(target, cfg: LossConfig):
    """Loss evaluator closure for ``numcore.loss_gradients``."""
    def evaluate(pred: np.ndarray):
        return aligned_loss_terms(pred, target, cfg)
    return evaluate


def build_window_targets(
    teacher: VelocityModel,
    schedule: WindowSchedule,
    data: np.ndarray,
    noise: np.ndarray,
    steps_per_window: int,
    rng: np.random.Generator,
) -> CouplingBatch:
    """Construct per-sample window endpoint couplings through the teacher.

    Each sample draws a uniform time to pick its window [t1, t2]; the start
    point is the direct noising of the data row at t1 and the end point is
    the teacher's Euler integration from there to t2.
    """
    data = as_tensor2(data, "data")
    noise = as_tensor2(noise, "noise")
    if data.shape != noise.shape:
        raise ShapeError(f"data shape {data.shape} != noise shape {noise.shape}")
    n = data.shape[0]
    idx = schedule.locate(rng.uniform(size=n))
    t1 = schedule.endpoints[idx]
    t2 = schedule.endpoints[idx + 1]
    z1 = interpolate(noise, data, t1)
    z2 = np.empty_like(z1)
    for k in range(schedule.n_windows):
        mask = idx == k
        if not np.any(mask):
            continue
        a = float(schedule.endpoints[k])
        b = float(schedule.endpoints[k + 1])
        try:
            z2[mask] = teacher_solve(teacher, z1[mask], a, b, steps_per_window)
        except NonFiniteError as err:
            raise NonFiniteError(
                f"teacher produced non-finite output in window {k} [{a}, {b}]: {err}"
            ) from err
    return CouplingBatch(z_start=z1, t_start=t1, z_end=z2, t_end=t2, window_index=idx)


@dataclass
class LossTrace:
    """Per-iteration loss values from one training stage."""

    iteration: np.ndarray
    loss: np.ndarray
    mse_term: np.ndarray
    cos_term: np.ndarray

    def rows(self):
        for row in zip(self.iteration, self.loss, self.mse_term, self.cos_term):
            yield row


@dataclass
class StageResult:
    """Frozen snapshot of one progressive stage."""

    window_count: int
    model: VelocityModel
    trace: LossTrace
    coupling_teacher: VelocityModel


def train_stage(
    student: VelocityModel,
    teacher: VelocityModel,
    schedule: WindowSchedule,
    plan: StagePlan,
    cfg: LossConfig,
    data_sampler,
    rng: np.random.Generator,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    adam_eps: float = 1e-8,
) -> tuple[VelocityModel, LossTrace]:
    """Train the student on window couplings from a frozen teacher.

    Per iteration: fresh (data, noise) pairs -> window couplings through the
    teacher -> interpolate at a fresh uniform time inside each sample's
    window -> aligned loss against the window slope -> Adam step.

    Randomness is consumed in a fixed order that does not depend on the loss
    config, so runs that differ only in alpha see identical couplings.
    """
    if plan.teacher_total_steps % schedule.n_windows != 0:
        raise ValueError(
            f"teacher_total_steps={plan.teacher_total_steps} is not divisible by "
            f"the schedule's window count {schedule.n_windows}"
        )
    steps_per_window = plan.teacher_total_steps // schedule.n_windows
    opt = numcore.init_optimizer(student, lr=lr, beta1=beta1, beta2=beta2, eps=adam_eps)
    n_iters = plan.iterations_per_stage
    trace = LossTrace(
        iteration=np.arange(n_iters),
        loss=np.empty(n_iters),
        mse_term=np.empty(n_iters),
        cos_term=np.empty(n_iters),
    )
    for it in range(n_iters):
        data = data_sampler(plan.batch_size, rng)
        noise = rng.standard_normal(data.shape)
        batch = build_window_targets(teacher, schedule, data, noise, steps_per_window, rng)
        width = batch.t_end - batch.t_start
        t = batch.t_start + rng.uniform(size=len(batch)) * width
        t = np.minimum(t, batch.t_end)  # guard the rare upward rounding past t_end
        z_t = window_interpolate(batch, t)
        target = window_target_velocity(batch)
        pred, cache = numcore.forward_cached(student, z_t, t)
        loss, dpred, mse_term, cos_term = aligned_loss_terms(pred, target, cfg)
        if not np.isfinite(loss) or loss > DIVERGENCE_LOSS_LIMIT:
            raise TrainingDivergence(
                f"stage with {schedule.n_windows} windows diverged at iteration {it}: "
                f"loss={loss} (mse={mse_term}, cos={cos_term})"
            )
        grads = numcore.backward_params(student, cache, dpred)
        numcore.optimizer_step(opt, student, grads)
        trace.loss[it] = loss
        trace.mse_term[it] = mse_term
        trace.cos_term[it] = cos_term
    return student, trace


def progressive_train(
    teacher: VelocityModel,
    plan: StagePlan,
    cfg: LossConfig,
    data_sampler,
    rng: np.random.Generator,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    adam_eps: float = 1e-8,
) -> list[StageResult]:
    """Stage-wise window-halving distillation.

    The student starts from the teacher's weights and trains through the
    plan's window counts on uniform schedules. Each stage's couplings are
    generated by the previous stage's model (stage 1 uses the original
    teacher), so every new window spans two windows of the trajectory the
    previous stage learned.
    """
    student = teacher.copy()
    coupling_teacher = teacher
    results: list[StageResult] = []
    for k in plan.window_counts:
        schedule = WindowSchedule.uniform(k)
        student, trace = train_stage(
            student,
            coupling_teacher,
            schedule,
            plan,
            cfg,
            data_sampler,
            rng,
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            adam_eps=adam_eps,
        )
        snapshot = student.copy()
        results.append(
            StageResult(
                window_count=k,
                model=snapshot,
                trace=trace,
                coupling_teacher=coupling_teacher,
            )
        )
        coupling_teacher = snapshot
    return results
