"""Small dense linear algebra, statistics kernels, Adam and gradient checking.

Matrices are plain 2-D float64 numpy arrays. Everything here is sized for
the 4- and 6-dimensional problems in this package; nothing is tuned for
large inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import rankdata


class NumericsError(ValueError):
    """Base class for numerical precondition failures."""


class Singular(NumericsError):
    pass


class NotPositiveDefinite(NumericsError):
    pass


class NotSymmetric(NumericsError):
    pass


class ZeroVariance(NumericsError):
    pass


class DegenerateRange(NumericsError):
    pass


class NonFiniteEvaluation(NumericsError):
    pass


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def invert_small(a, pivot_tol: float = 1e-12) -> np.ndarray:
    """Gauss-Jordan inversion with partial pivoting.

    Raises Singular when the best available pivot falls below ``pivot_tol``.
    """
    a = as_matrix(a)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"matrix must be square, got {a.shape}")
    if n > 16:
        raise ValueError("invert_small supports at most 16x16 matrices")
    aug = np.hstack([a.copy(), np.eye(n)])
    for col in range(n):
        p = col + int(np.argmax(np.abs(aug[col:, col])))
        if abs(aug[p, col]) < pivot_tol:
            raise Singular(f"pivot {aug[p, col]:.3e} in column {col}")
        if p != col:
            aug[[col, p]] = aug[[p, col]]
        aug[col] /= aug[col, col]
        for r in range(n):
            if r != col and aug[r, col] != 0.0:
                aug[r] -= aug[r, col] * aug[col]
    return aug[:, n:].copy()


def random_orthogonal(seed: int, n: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix from QR of a Gaussian matrix.

    Column signs are fixed so that R has a positive diagonal, which makes the
    result a deterministic function of the Gaussian draw.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    g = np.random.default_rng(seed).standard_normal((n, n))
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def cholesky(a) -> np.ndarray:
    """Lower-triangular Cholesky factor; raises NotPositiveDefinite."""
    a = as_matrix(a)
    n = a.shape[0]
    low = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - low[j, :j] @ low[j, :j]
        if d <= 0.0:
            raise NotPositiveDefinite(f"pivot {d:.3e} at index {j}")
        low[j, j] = np.sqrt(d)
        low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    return low


def _check_symmetric(a: np.ndarray, tol: float) -> None:
    if a.shape[0] != a.shape[1]:
        raise NotSymmetric(f"matrix is not square: {a.shape}")
    if np.max(np.abs(a - a.T), initial=0.0) > tol * max(1.0, np.max(np.abs(a))):
        raise NotSymmetric("matrix is not symmetric")


def sym_logdet(a) -> float:
    a = as_matrix(a)
    _check_symmetric(a, 1e-9)
    return float(2.0 * np.sum(np.log(np.diag(cholesky(a)))))


def jacobi_eigh(a, tol: float = 1e-15, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns (eigenvalues, eigenvectors) with ``a = V diag(w) V^T``.
    """
    a = as_matrix(a).copy()
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.max(np.abs(a)), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    return np.diag(a).copy(), v


def sqrtm_psd(a) -> np.ndarray:
    """Symmetric square root of a PSD matrix via Jacobi eigendecomposition.

    Tiny negative eigenvalues from rounding are clipped to zero.
    """
    a = as_matrix(a)
    _check_symmetric(a, 1e-9)
    sym = 0.5 * (a + a.T)
    w, v = jacobi_eigh(sym)
    w = np.clip(w, 0.0, None)
    r = (v * np.sqrt(w)) @ v.T
    return 0.5 * (r + r.T)


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman expects two 1-D sequences of equal length")
    if x.size < 3:
        raise ValueError("spearman needs at least 3 observations")
    rx = rankdata(x) - (x.size + 1) / 2.0
    ry = rankdata(y) - (y.size + 1) / 2.0
    sx, sy = np.sqrt(rx @ rx), np.sqrt(ry @ ry)
    if sx == 0.0 or sy == 0.0:
        raise ZeroVariance("constant rank sequence")
    return float(np.clip((rx @ ry) / (sx * sy), -1.0, 1.0))


def hungarian(cost) -> list[int]:
    """Minimum-cost assignment of rows to distinct columns.

    Shortest augmenting path formulation with row/column potentials
    (O(n^2 m)). ``result[i]`` is the column assigned to row ``i``.
    """
    c = as_matrix(cost)
    n, m = c.shape
    if n > m:
        raise ValueError("hungarian needs rows <= cols")
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=int)  # owner[j]: 1-based row matched to column j
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta, j1 = inf, 0
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = c[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta, j1 = minv[j], j
            for j in range(m + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    assignment = [-1] * n
    for j in range(1, m + 1):
        if owner[j]:
            assignment[owner[j] - 1] = j - 1
    return assignment


def bin_indices(x, bins: int) -> np.ndarray:
    """Equal-width bin index per entry over [min, max]; the last bin is closed."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = float(np.min(x)), float(np.max(x))
    if not hi > lo:
        raise DegenerateRange(f"constant input (min = max = {lo})")
    idx = np.floor((x - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def entropy_from_counts(counts) -> float:
    p = np.asarray(counts, dtype=np.float64).ravel()
    p = p[p > 0] / p.sum()
    return float(-np.sum(p * np.log(p)))


def mi_from_joint(joint) -> float:
    """Mutual information (nats) of a joint table of counts or probabilities."""
    pxy = np.asarray(joint, dtype=np.float64)
    pxy = pxy / pxy.sum()
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    mi = np.sum(pxy[nz] * (np.log(pxy[nz]) - np.log((px @ py)[nz])))
    return float(max(mi, 0.0))


def histogram_mi(x, y, bins: int = 20) -> float:
    """Plug-in mutual information (nats) between two binned sequences."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("sequences must have equal length")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    ix, iy = bin_indices(x, bins), bin_indices(y, bins)
    joint = np.bincount(ix * bins + iy, minlength=bins * bins).reshape(bins, bins)
    return mi_from_joint(joint)


@dataclass
class AdamState:
    size: int
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)

    def copy(self) -> "AdamState":
        return AdamState(self.size, self.beta1, self.beta2, self.epsilon, self.step,
                         self.m.copy(), self.v.copy())


def adam_step(state: AdamState, params, grads, lr: float) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new params and new state."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != (state.size,) or grads.shape != (state.size,):
        raise ValueError("params/grads length does not match the Adam state")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new, AdamState(state.size, state.beta1, state.beta2, state.epsilon, step, m, v)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteEvaluation(f"non-finite value near coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g
