"""Three-factor synthetic data: ring, uniform square and bimodal Gaussian blocks.

Observations come from a fixed quadratic decoder with cross-factor
interactions, and entangled codes are ``z = M s`` for a random orthogonal M.
Arrays are row-per-sample: factors ``(n, 6)``, entangled ``(n, 6)``,
observations ``(n, 4)``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import random_orthogonal
from .seeding import stream

FACTOR_COLUMNS = ["s1x", "s1y", "s2x", "s2y", "s3x", "s3y"]
ENTANGLED_COLUMNS = [f"z{i}" for i in range(1, 7)]
OBS_COLUMNS = ["x0", "x1", "x2", "x3"]
CSV_COLUMNS = FACTOR_COLUMNS + ENTANGLED_COLUMNS + OBS_COLUMNS


@dataclass(frozen=True)
class GroundTruthSpec:
    ring_radius: float = 1.0
    ring_noise: float = 0.1
    square_half_width: float = 1.0
    bimodal_means: tuple = ((1.5, 0.0), (-1.5, 0.0))
    bimodal_std: float = 0.3
    mixing_seed: int = 0
    M: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.ring_noise < 0 or self.bimodal_std <= 0:
            raise ValueError("ring_noise must be >= 0 and bimodal_std > 0")
        if self.square_half_width <= 0 or self.ring_radius <= 0:
            raise ValueError("ring_radius and square_half_width must be > 0")
        if self.M is None:
            object.__setattr__(self, "M", random_orthogonal(self.mixing_seed, 6))
        m = np.asarray(self.M, dtype=np.float64)
        if m.shape != (6, 6) or np.max(np.abs(m.T @ m - np.eye(6))) > 1e-10:
            raise ValueError("M must be a 6x6 orthogonal matrix")
        object.__setattr__(self, "M", m)

    def to_dict(self) -> dict:
        return {
            "ring_radius": self.ring_radius,
            "ring_noise": self.ring_noise,
            "square_half_width": self.square_half_width,
            "bimodal_means": [list(map(float, mu)) for mu in self.bimodal_means],
            "bimodal_std": self.bimodal_std,
            "mixing_seed": self.mixing_seed,
            "M": self.M.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthSpec":
        return cls(
            ring_radius=float(d["ring_radius"]),
            ring_noise=float(d["ring_noise"]),
            square_half_width=float(d["square_half_width"]),
            bimodal_means=tuple(tuple(float(v) for v in mu) for mu in d["bimodal_means"]),
            bimodal_std=float(d["bimodal_std"]),
            mixing_seed=int(d["mixing_seed"]),
            M=np.asarray(d["M"], dtype=np.float64) if "M" in d else None,
        )


@dataclass(frozen=True)
class Dataset:
    factors: np.ndarray
    entangled: np.ndarray
    observations: np.ndarray
    spec: GroundTruthSpec

    def __post_init__(self):
        n = len(self.factors)
        if not (len(self.entangled) == len(self.observations) == n):
            raise ValueError("dataset arrays have different lengths")

    def __len__(self) -> int:
        return len(self.factors)


def sample_factors(seed: int, n: int, spec: GroundTruthSpec | None = None) -> np.ndarray:
    spec = spec or GroundTruthSpec()
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = stream(seed, "factors")
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    r = spec.ring_radius + spec.ring_noise * rng.standard_normal(n)
    s1 = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    h = spec.square_half_width
    s2 = rng.uniform(-h, h, (n, 2))
    means = np.asarray(spec.bimodal_means, dtype=np.float64)
    comp = rng.integers(0, len(means), n)
    s3 = means[comp] + spec.bimodal_std * rng.standard_normal((n, 2))
    return np.hstack([s1, s2, s3])


def decode(s) -> np.ndarray:
    """Fixed decoder ``(.., 6) -> (.., 4)``."""
    s = np.asarray(s, dtype=np.float64)
    s1x, s1y, s2x, s2y, s3x, s3y = (s[..., i] for i in range(6))
    return np.stack([
        s1x * s2x + s1y * s2y,
        s2x * s3x + s2y * s3y,
        # paired differences keep x2 exactly antisymmetric under s1 <-> s3
        (s1x * s1x - s3x * s3x) + (s1y * s1y - s3y * s3y),
        s1x * s3y - s1y * s3x,
    ], axis=-1)


def decode_jacobian(s) -> np.ndarray:
    """Jacobian of :func:`decode`, shape ``(.., 4, 6)``."""
    s = np.asarray(s, dtype=np.float64)
    s1x, s1y, s2x, s2y, s3x, s3y = (s[..., i] for i in range(6))
    z = np.zeros_like(s1x)
    rows = [
        [s2x, s2y, s1x, s1y, z, z],
        [z, z, s3x, s3y, s2x, s2y],
        [2 * s1x, 2 * s1y, z, z, -2 * s3x, -2 * s3y],
        [s3y, -s3x, z, z, -s1y, s1x],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def entangle(s, M) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (6, 6) or s.shape[-1] != 6:
        raise ValueError(f"dimension mismatch: M {M.shape}, s {s.shape}")
    return s @ M.T


def make_dataset(seed: int, n: int, spec: GroundTruthSpec | None = None) -> Dataset:
    spec = spec or GroundTruthSpec()
    s = sample_factors(seed, n, spec)
    return Dataset(factors=s, entangled=entangle(s, spec.M), observations=decode(s), spec=spec)


def write_csv(path, factors, entangled, observations) -> None:
    rows = np.hstack([factors, entangled, observations])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def save_dataset(ds: Dataset, csv_path, spec_path) -> None:
    write_csv(csv_path, ds.factors, ds.entangled, ds.observations)
    Path(spec_path).write_text(json.dumps(ds.spec.to_dict(), indent=2, sort_keys=True) + "\n")


def load_dataset(csv_path, spec_path) -> Dataset:
    spec = GroundTruthSpec.from_dict(json.loads(Path(spec_path).read_text()))
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_COLUMNS:
            raise ValueError(f"unexpected dataset header in {csv_path}")
        data = np.array([[float(v) for v in row] for row in reader], dtype=np.float64)
    if data.size == 0:
        raise ValueError(f"dataset {csv_path} has no rows")
    return Dataset(factors=data[:, :6], entangled=data[:, 6:12], observations=data[:, 12:], spec=spec)
