"""Quantitative diagnostics: sliced Wasserstein-2 sample quality, trajectory
straightness, pairwise velocity-gap matrices, the direction-vs-magnitude
error gap, and the matched-perturbation noise-injection ablation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flowcore import interpolate
from .numcore import ShapeError, VelocityModel, as_tensor2, forward
from .sampler import euler_sample

__all__ = [
    "sliced_w2",
    "energy_distance",
    "straightness",
    "VelocityGapReport",
    "velocity_gap_matrix",
    "direction_error_gap",
    "NoiseEvalConfig",
    "NoiseAblationReport",
    "noise_ablation",
]

_TINY_NORM = 1e-12


def _unit_directions(dim: int, n_projections: int, rng: np.random.Generator) -> np.ndarray:
    proj = rng.standard_normal((dim, n_projections))
    return proj / np.linalg.norm(proj, axis=0, keepdims=True)


def sliced_w2(a, b, n_projections: int = 128, seed: int = 0) -> float:
    """Root of the mean squared 1-D Wasserstein-2 distance over seeded
    uniform projection directions; unequal set sizes are subsampled to match.
    """
    a = as_tensor2(a, "a")
    b = as_tensor2(b, "b")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("point sets must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if n_projections < 1:
        raise ValueError(f"n_projections must be >= 1, got {n_projections}")
    rng = np.random.Generator(np.random.PCG64(seed))
    thetas = _unit_directions(a.shape[1], n_projections, rng)
    if a.shape[0] != b.shape[0]:
        m = min(a.shape[0], b.shape[0])
        # one draw on the common stream keeps the metric symmetric per seed
        keep = rng.choice(max(a.shape[0], b.shape[0]), size=m, replace=False)
        if a.shape[0] > m:
            a = a[keep]
        else:
            b = b[keep]
    pa = np.sort(a @ thetas, axis=0)
    pb = np.sort(b @ thetas, axis=0)
    w2_sq = np.mean((pa - pb) ** 2, axis=0)
    return float(np.sqrt(np.mean(w2_sq)))


def energy_distance(a, b, max_points: int = 2048, seed: int = 0) -> float:
    """Energy distance cross-check: sqrt(2 E|a-b| - E|a-a'| - E|b-b'|)."""
    a = as_tensor2(a, "a")
    b = as_tensor2(b, "b")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("point sets must be non-empty")
    rng = np.random.Generator(np.random.PCG64(seed))
    if a.shape[0] > max_points:
        a = a[rng.choice(a.shape[0], size=max_points, replace=False)]
    if b.shape[0] > max_points:
        b = b[rng.choice(b.shape[0], size=max_points, replace=False)]

    def mean_pair_dist(x, y):
        sq = (
            np.sum(x * x, axis=1)[:, None]
            + np.sum(y * y, axis=1)[None, :]
            - 2.0 * (x @ y.T)
        )
        return float(np.mean(np.sqrt(np.maximum(sq, 0.0))))

    val = 2.0 * mean_pair_dist(a, b) - mean_pair_dist(a, a) - mean_pair_dist(b, b)
    return float(np.sqrt(max(val, 0.0)))


def straightness(model_or_field, n_traj: int, n_steps: int, rng: np.random.Generator, dim: int = 2) -> float:
    """Mean squared deviation of step velocities from the trajectory chord.

    Zero iff every sampled trajectory has a constant velocity. This is this
    artifact's operational straightness statistic; it is not a quantity with
    a single canonical definition elsewhere.
    """
    if n_steps < 2:
        raise ValueError(f"n_steps must be >= 2, got {n_steps}")
    if isinstance(model_or_field, VelocityModel):
        dim = model_or_field.data_dim
    z0 = rng.standard_normal((n_traj, dim))
    _, rec = euler_sample(model_or_field, n_steps, z0, record=True)
    chord = rec.states[-1] - rec.states[0]
    dev = rec.velocities - chord[None, :, :]
    return float(np.mean(np.sum(dev * dev, axis=2)))


@dataclass
class VelocityGapReport:
    """Pairwise velocity statistics across timesteps, averaged over samples."""

    n_timesteps: int
    l2_matrix: np.ndarray
    cos_matrix: np.ndarray
    n_samples: int

    def __post_init__(self) -> None:
        t = self.n_timesteps
        if self.l2_matrix.shape != (t, t) or self.cos_matrix.shape != (t, t):
            raise ShapeError(f"matrices must be {t}x{t}")
        if not np.array_equal(self.l2_matrix, self.l2_matrix.T) or np.any(
            np.diag(self.l2_matrix) != 0.0
        ):
            raise ValueError("l2_matrix must be symmetric with zero diagonal")
        if not np.array_equal(self.cos_matrix, self.cos_matrix.T) or np.any(
            np.abs(np.diag(self.cos_matrix) - 1.0) > 1e-9
        ):
            raise ValueError("cos_matrix must be symmetric with unit diagonal")


def _pairwise_cos(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per-row cosine; two near-zero rows count as aligned (cos 1)."""
    dots = np.sum(u * v, axis=1)
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    both_zero = (nu < _TINY_NORM) & (nv < _TINY_NORM)
    one_zero = ((nu < _TINY_NORM) | (nv < _TINY_NORM)) & ~both_zero
    denom = np.where(nu * nv < _TINY_NORM, 1.0, nu * nv)
    cos = dots / denom
    cos[both_zero] = 1.0
    cos[one_zero] = 0.0
    return cos


def velocity_gap_matrix(
    model_or_field, n_timesteps: int, n_samples: int, rng: np.random.Generator, dim: int = 2
) -> VelocityGapReport:
    """Average pairwise L2 distance and cosine similarity between the
    velocities v_t = T * (x_{t+1} - x_t) observed at different timesteps.
    """
    if n_timesteps < 2:
        raise ValueError(f"n_timesteps must be >= 2, got {n_timesteps}")
    if isinstance(model_or_field, VelocityModel):
        dim = model_or_field.data_dim
    z0 = rng.standard_normal((n_samples, dim))
    _, rec = euler_sample(model_or_field, n_timesteps, z0, record=True)
    t = n_timesteps
    vels = float(t) * (rec.states[1:] - rec.states[:-1])  # (T, n, dim)
    l2 = np.zeros((t, t))
    cos = np.ones((t, t))
    for i in range(t):
        for j in range(i + 1, t):
            diff = vels[i] - vels[j]
            l2_ij = float(np.mean(np.linalg.norm(diff, axis=1)))
            cos_ij = float(np.mean(_pairwise_cos(vels[i], vels[j])))
            l2[i, j] = l2[j, i] = l2_ij
            cos[i, j] = cos[j, i] = cos_ij
        # diagonal: identical vectors, exactly aligned by construction
        cos[i, i] = float(np.mean(_pairwise_cos(vels[i], vels[i])))
    return VelocityGapReport(
        n_timesteps=t, l2_matrix=l2, cos_matrix=cos, n_samples=n_samples
    )


def direction_error_gap(v_mag: float, eps: float) -> tuple[float, float, float]:
    """Law-of-cosines error gap between a purely directional and a purely
    magnitudinal prediction error of size eps.

    r1 = 2 |v|^2 (1 - cos eps)   (misaligned, accurate magnitude)
    r2 = eps^2                   (aligned, inaccurate magnitude)
    y  = r1 - r2, which for small eps behaves as (|v|^2 - 1) eps^2.

    1 - cos(eps) is evaluated as 2 sin^2(eps/2) to avoid cancellation.
    """
    if not v_mag > 0:
        raise ValueError(f"v_mag must be > 0, got {v_mag}")
    if not 0.0 < eps <= 0.1:
        raise ValueError(f"eps must lie in (0, 0.1], got {eps}")
    s = math.sin(eps / 2.0)
    r1 = 4.0 * v_mag * v_mag * s * s
    r2 = eps * eps
    return r1, r2, r1 - r2


def _decompose(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split velocities into magnitude and unit direction (zero rows stay zero)."""
    mag = np.linalg.norm(v, axis=1)
    safe = np.where(mag < _TINY_NORM, 1.0, mag)
    d = v / safe[:, None]
    d[mag < _TINY_NORM] = 0.0
    return mag, d


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1)
    safe = np.where(n < _TINY_NORM, 1.0, n)
    out = x / safe[:, None]
    out[n < _TINY_NORM] = 0.0
    return out


@dataclass(frozen=True)
class NoiseEvalConfig:
    """Sampling/evaluation settings for the noise-injection ablation."""

    reference: np.ndarray
    n_samples: int = 2048
    sample_steps: int = 8
    n_projections: int = 128
    probe_size: int = 1024
    w2_seed: int = 0


@dataclass
class NoiseAblationReport:
    noise_scales: list[float]
    base_quality: float
    magnitude_quality: list[float]
    direction_quality: list[float]
    matched_l2: list[float]


def _probe_field_l2(base_v: np.ndarray, perturbed_v: np.ndarray) -> float:
    delta = perturbed_v - base_v
    return float(np.sqrt(np.mean(np.sum(delta * delta, axis=1))))


def noise_ablation(
    model: VelocityModel,
    scales,
    eval_cfg: NoiseEvalConfig,
    rng: np.random.Generator,
    rel_tol: float = 0.01,
) -> NoiseAblationReport:
    """Compare sample-quality degradation under magnitude vs direction noise
    at matched field-perturbation L2.

    Per scale: (a) sample with per-evaluation Gaussian noise on the velocity
    magnitude; (b) measure that perturbation's L2 on a fixed probe set;
    (c) binary-search a direction-noise scale whose probe L2 matches (b)
    within ``rel_tol``, then sample with it.
    """
    scales = [float(s) for s in scales]
    if any(s < 0 for s in scales):
        raise ValueError(f"noise scales must be >= 0, got {scales}")
    reference = as_tensor2(eval_cfg.reference, "reference")
    dim = model.data_dim

    z0 = rng.standard_normal((eval_cfg.n_samples, dim))
    base_samples = euler_sample(model, eval_cfg.sample_steps, z0)
    base_quality = sliced_w2(
        base_samples, reference, eval_cfg.n_projections, eval_cfg.w2_seed
    )

    # fixed probe set along noising paths between reference data and noise
    probe_t = rng.uniform(size=eval_cfg.probe_size)
    probe_data = reference[rng.integers(0, reference.shape[0], size=eval_cfg.probe_size)]
    probe_noise = rng.standard_normal((eval_cfg.probe_size, dim))
    probe_z = interpolate(probe_noise, probe_data, probe_t)
    probe_v = forward(model, probe_z, probe_t)
    probe_mag, probe_dir = _decompose(probe_v)

    def sample_with(perturb) -> np.ndarray:
        def field(z, t):
            v = forward(model, z, np.full(z.shape[0], t))
            return perturb(v)
        return euler_sample(field, eval_cfg.sample_steps, z0)

    magnitude_quality: list[float] = []
    direction_quality: list[float] = []
    matched_l2: list[float] = []
    for scale in scales:
        if scale == 0.0:
            magnitude_quality.append(base_quality)
            direction_quality.append(base_quality)
            matched_l2.append(0.0)
            continue

        # (a)+(b): magnitude perturbation and its probe-set L2
        probe_g = rng.standard_normal(eval_cfg.probe_size)
        mag_probe_v = (probe_mag + scale * probe_g)[:, None] * probe_dir
        target_l2 = _probe_field_l2(probe_v, mag_probe_v)

        mag_rng = np.random.Generator(np.random.PCG64(int(rng.integers(2**63))))

        def perturb_magnitude(v):
            mag, d = _decompose(v)
            g = mag_rng.standard_normal(v.shape[0])
            return (mag + scale * g)[:, None] * d

        magnitude_quality.append(
            sliced_w2(
                sample_with(perturb_magnitude),
                reference,
                eval_cfg.n_projections,
                eval_cfg.w2_seed,
            )
        )

        # (c): direction-noise scale matched to the same probe L2
        probe_gdir = rng.standard_normal((eval_cfg.probe_size, dim))

        def dir_probe_l2(sigma: float) -> float:
            d_new = _normalize_rows(probe_dir + sigma * probe_gdir)
            return _probe_field_l2(probe_v, probe_mag[:, None] * d_new)

        sigma = _match_scale(dir_probe_l2, target_l2, rel_tol)
        matched_l2.append(dir_probe_l2(sigma))

        dir_rng = np.random.Generator(np.random.PCG64(int(rng.integers(2**63))))

        def perturb_direction(v):
            mag, d = _decompose(v)
            g = dir_rng.standard_normal(v.shape)
            return mag[:, None] * _normalize_rows(d + sigma * g)

        direction_quality.append(
            sliced_w2(
                sample_with(perturb_direction),
                reference,
                eval_cfg.n_projections,
                eval_cfg.w2_seed,
            )
        )

    return NoiseAblationReport(
        noise_scales=scales,
        base_quality=base_quality,
        magnitude_quality=magnitude_quality,
        direction_quality=direction_quality,
        matched_l2=matched_l2,
    )


def _match_scale(l2_of_sigma, target: float, rel_tol: float, max_iter: int = 200) -> float:
    """Binary-search sigma with l2_of_sigma(sigma) ~ target (monotone in sigma)."""
    if target <= 0.0:
        return 0.0
    hi = 1.0
    for _ in range(80):
        if l2_of_sigma(hi) >= target:
            break
        hi *= 2.0
    else:
        raise ValueError(
            f"cannot bracket direction-noise scale: probe L2 at sigma={hi} is "
            f"{l2_of_sigma(hi):.6g}, below target {target:.6g} "
            "(direction perturbations saturate at twice the field magnitude)"
        )
    lo = 0.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = l2_of_sigma(mid)
        if abs(val - target) <= rel_tol * target:
            return mid
        if val < target:
            lo = mid
        else:
            hi = mid
    raise ValueError(
        f"direction-noise scale search did not converge: target {target:.6g}, "
        f"bracket [{lo:.6g}, {hi:.6g}]"
    )
