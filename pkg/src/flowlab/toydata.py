"""Seeded generators for the 2-D target distributions and the Gaussian source.

Every generator is a pure function of its arguments: ``sample_data(spec, n)``
always returns the same samples for the same spec, and training code that
needs fresh draws per iteration threads its own ``numpy.random.Generator``
through ``draw_data``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .numcore import check_finite

__all__ = [
    "DATASET_NAMES",
    "DatasetSpec",
    "derive_seed",
    "derive_rng",
    "gauss8_centers",
    "sample_data",
    "draw_data",
    "sample_noise",
]

DATASET_NAMES = ("gauss8", "moons", "checkerboard", "spiral")

GAUSS8_STD_FRACTION = 1.0 / 20.0  # per-mode std = scale/20: keeps modes well separated


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    dim: int = 2
    scale: float = 4.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.name not in DATASET_NAMES:
            raise ValueError(f"unknown dataset {self.name!r}; choose from {DATASET_NAMES}")
        if self.dim != 2:
            raise ValueError(f"built-in datasets are 2-D, got dim={self.dim}")
        if not self.scale > 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")


def derive_seed(root_seed: int, label: str) -> int:
    """Labeled 64-bit child seed; distinct labels give independent streams."""
    digest = hashlib.sha256(f"{label}:{int(root_seed)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(root_seed: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(root_seed, label)))


def gauss8_centers(scale: float) -> np.ndarray:
    """The 8 mode centers, exactly (scale*cos(2*pi*k/8), scale*sin(2*pi*k/8))."""
    k = np.arange(8, dtype=np.float64)
    ang = 2.0 * np.pi * k / 8.0
    return np.stack([scale * np.cos(ang), scale * np.sin(ang)], axis=1)


def _draw(spec: DatasetSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.name == "gauss8":
        centers = gauss8_centers(spec.scale)
        modes = rng.integers(0, 8, size=n)
        pts = centers[modes] + rng.standard_normal((n, 2)) * (spec.scale * GAUSS8_STD_FRACTION)
    elif spec.name == "moons":
        # two interleaved half circles, centered then scaled; per-sample moon choice
        theta = rng.uniform(0.0, np.pi, size=n)
        which = rng.integers(0, 2, size=n)
        x = np.where(which == 0, np.cos(theta), 1.0 - np.cos(theta))
        y = np.where(which == 0, np.sin(theta), 0.5 - np.sin(theta))
        pts = np.stack([x - 0.5, y - 0.25], axis=1)
        pts = pts * (spec.scale / 1.5)
        pts += rng.standard_normal((n, 2)) * (0.05 * spec.scale)
    elif spec.name == "checkerboard":
        x = rng.uniform(-2.0, 2.0, size=n)
        y = rng.uniform(0.0, 1.0, size=n) - 2.0 * rng.integers(0, 2, size=n)
        y = y + np.floor(x) % 2
        pts = np.stack([x, y], axis=1) * (spec.scale / 2.0)
    elif spec.name == "spiral":
        theta = 3.0 * np.pi * np.sqrt(rng.uniform(0.0, 1.0, size=n))
        r = spec.scale * theta / (3.0 * np.pi)
        pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        pts += rng.standard_normal((n, 2)) * (spec.scale / 40.0)
    else:  # pragma: no cover - DatasetSpec already validated the name
        raise ValueError(f"unknown dataset {spec.name!r}")
    check_finite(pts, f"{spec.name} samples")
    return pts


def sample_data(spec: DatasetSpec, n: int) -> np.ndarray:
    """n i.i.d. samples from the target distribution; deterministic per (spec, n)."""
    if n <= 0:
        raise ValueError(f"n must be > 0, got {n}")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    return _draw(spec, n, rng)


def draw_data(spec: DatasetSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Fresh draws from a caller-owned stream (training-loop path)."""
    if n <= 0:
        raise ValueError(f"n must be > 0, got {n}")
    return _draw(spec, n, rng)


def sample_noise(n: int, dim: int, seed: int) -> np.ndarray:
    """Standard normal source samples, deterministic per seed."""
    if n <= 0:
        raise ValueError(f"n must be > 0, got {n}")
    if dim <= 0:
        raise ValueError(f"dim must be > 0, got {dim}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.standard_normal((n, dim))
