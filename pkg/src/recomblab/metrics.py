"""Disentanglement and off-manifold metrics.

All functions take row-per-sample arrays. MI and entropies are in nats.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .numerics import (
    NotPositiveDefinite,
    ZeroVariance,
    bin_indices,
    cholesky,
    entropy_from_counts,
    histogram_mi,
    hungarian,
    invert_small,
    spearman,
    sqrtm_psd,
    sym_logdet,
)
from .seeding import stream

TC_CONVENTION = "0.5*(sum(log diag cov) - logdet cov)"


@dataclass(frozen=True)
class GaussianRef:
    mean: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.mean)


@dataclass(frozen=True)
class MetricsReport:
    mahalanobis2_mean: float
    mcc: float
    mig: float
    tc: float
    block_corr: float
    frechet: float
    sample_count: int
    seed: int

    CSV_COLUMNS = ("mahalanobis2_mean", "mcc", "mig", "tc", "block_corr",
                   "frechet", "sample_count", "seed")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tc_convention"] = TC_CONVENTION
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def csv_row(self) -> list[str]:
        return [repr(getattr(self, c)) for c in self.CSV_COLUMNS]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(self.CSV_COLUMNS)
        w.writerow(self.csv_row())
        return buf.getvalue()


def _covariance(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] <= x.shape[1] + 1:
        raise ValueError("need a (n, d) batch with n > d + 1")
    mu = x.mean(axis=0)
    c = x - mu
    return mu, (c.T @ c) / (len(x) - 1)


def fit_gaussian(samples) -> GaussianRef:
    mu, cov = _covariance(samples)
    cholesky(cov)  # raises NotPositiveDefinite for degenerate data
    return GaussianRef(mu, cov, invert_small(cov))


def mahalanobis2_each(samples, ref: GaussianRef) -> np.ndarray:
    d = np.atleast_2d(np.asarray(samples, dtype=np.float64)) - ref.mean
    return np.maximum(np.einsum("ni,ij,nj->n", d, ref.precision, d), 0.0)


def mahalanobis2(samples, ref: GaussianRef) -> float:
    return float(mahalanobis2_each(samples, ref).mean())


def _safe_spearman(x, y) -> float:
    try:
        return spearman(x, y)
    except ZeroVariance:
        return 0.0


def abs_spearman_matrix(latents, factors) -> np.ndarray:
    lat = np.asarray(latents, dtype=np.float64)
    fac = np.asarray(factors, dtype=np.float64)
    return np.array([[abs(_safe_spearman(lat[:, i], fac[:, j])) for j in range(fac.shape[1])]
                     for i in range(lat.shape[1])])


def mcc(latents, factors) -> float:
    """Mean matched absolute Spearman correlation (per coordinate)."""
    lat = np.asarray(latents, dtype=np.float64)
    fac = np.asarray(factors, dtype=np.float64)
    if lat.shape[0] != fac.shape[0] or lat.shape[0] < 10:
        raise ValueError("need matching row counts, at least 10")
    if lat.shape[1] < fac.shape[1]:
        raise ValueError("need at least as many latent coordinates as factors")
    rho = abs_spearman_matrix(lat, fac)          # (D, F)
    assign = hungarian(1.0 - rho.T)              # factor -> latent
    return float(np.mean([rho[assign[j], j] for j in range(fac.shape[1])]))


def mig(latents, factors, bins: int = 20, n_eval: int = 4000, seed: int = 0) -> float:
    lat = np.asarray(latents, dtype=np.float64)
    fac = np.asarray(factors, dtype=np.float64)
    if lat.shape[1] < 2:
        raise ValueError("MIG needs at least two latent coordinates")
    if len(lat) > n_eval:
        idx = np.sort(stream(seed, "mig-subsample").choice(len(lat), n_eval, replace=False))
        lat, fac = lat[idx], fac[idx]
    gaps = []
    for j in range(fac.shape[1]):
        h = entropy_from_counts(np.bincount(bin_indices(fac[:, j], bins), minlength=bins))
        mis = np.sort([histogram_mi(lat[:, i], fac[:, j], bins) for i in range(lat.shape[1])])[::-1]
        gaps.append((mis[0] - mis[1]) / h)
    return float(np.mean(gaps))


def gaussian_tc(samples) -> float:
    _, cov = _covariance(samples)
    diag = np.diag(cov)
    if np.any(diag <= 0):
        raise NotPositiveDefinite("zero-variance coordinate")
    return float(0.5 * (np.sum(np.log(diag)) - sym_logdet(cov)))


def block_norm_corr(latents, blocks=(2, 2, 2)) -> float:
    lat = np.asarray(latents, dtype=np.float64)
    blocks = list(blocks)
    if sum(blocks) != lat.shape[1] or len(blocks) < 2:
        raise ValueError("block sizes must sum to the latent dimension, with >= 2 blocks")
    edges = np.cumsum([0] + blocks)
    norms = np.stack([np.linalg.norm(lat[:, a:b], axis=1) for a, b in zip(edges[:-1], edges[1:])], axis=1)
    if np.any(norms.std(axis=0) == 0):
        raise ZeroVariance("a block norm is constant")
    c = np.corrcoef(norms, rowvar=False)
    off = ~np.eye(len(blocks), dtype=bool)
    return float(np.mean(np.abs(c[off])))


def frechet_from_moments(mu_a, cov_a, mu_b, cov_b) -> float:
    ra = sqrtm_psd(cov_a)
    cross = sqrtm_psd(0.5 * ((ra @ cov_b @ ra) + (ra @ cov_b @ ra).T))
    d = np.asarray(mu_a) - np.asarray(mu_b)
    val = float(d @ d + np.trace(cov_a + cov_b - 2.0 * cross))
    return max(val, 0.0)


def frechet_gaussian(samples_a, samples_b) -> float:
    a, b = fit_gaussian(samples_a), fit_gaussian(samples_b)
    return frechet_from_moments(a.mean, a.covariance, b.mean, b.covariance)


def full_report(latents, factors, observations, ref: GaussianRef, *, seed: int = 0,
                bins: int = 20, n_eval: int = 4000, blocks=(2, 2, 2)) -> MetricsReport:
    """Every metric for one representation.

    ``latents``/``factors`` feed MCC, MIG, TC and block correlation;
    ``observations`` are scored against ``ref`` (Mahalanobis^2, Frechet).
    """
    lat = np.asarray(latents, dtype=np.float64)
    obs = np.asarray(observations, dtype=np.float64)
    if len(lat) != len(factors):
        raise ValueError("latents and factors have different row counts")
    ob = fit_gaussian(obs)
    return MetricsReport(
        mahalanobis2_mean=mahalanobis2(obs, ref),
        mcc=mcc(lat, factors),
        mig=mig(lat, factors, bins=bins, n_eval=n_eval, seed=seed),
        tc=gaussian_tc(lat),
        block_corr=block_norm_corr(lat, blocks),
        frechet=frechet_from_moments(ref.mean, ref.covariance, ob.mean, ob.covariance),
        sample_count=int(len(obs)),
        seed=int(seed),
    )
