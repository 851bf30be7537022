"""Numerical checks of the recombination theory and the coverage argument.

* additive energies normalize to the same density as a weighted product of
  normalized experts,
* closure of a code set under single-block recombination yields the
  Cartesian product of its block projections,
* mixing a joint with the product of its marginals contracts MI at least
  linearly in the mixing weight,
* expected number of distinct bins hit by n i.i.d. draws, plus a Monte Carlo
  check and an illustrative inverted-U family.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .numerics import mi_from_joint
from .recombine import POLICIES
from .seeding import stream


class TheoryError(ValueError):
    pass


class NonFiniteDensity(TheoryError):
    pass


class ContractionViolation(TheoryError):
    pass


@dataclass(frozen=True)
class DiscreteJoint:
    pmf: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pmf, dtype=np.float64)
        if p.ndim != 2 or p.size == 0:
            raise TheoryError("pmf must be a non-empty 2-D table")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise TheoryError("pmf entries must be finite and non-negative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise TheoryError(f"pmf sums to {p.sum()!r}, not 1")
        object.__setattr__(self, "pmf", p)


@dataclass(frozen=True)
class EnergySet:
    grid: np.ndarray
    energies: np.ndarray      # (K, G)
    alphas: np.ndarray        # (K,)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        e = np.atleast_2d(np.asarray(self.energies, dtype=np.float64))
        a = np.asarray(self.alphas, dtype=np.float64).reshape(-1)
        if np.any(np.diff(g) <= 0):
            raise TheoryError("grid must be strictly increasing")
        if e.shape != (len(a), len(g)):
            raise TheoryError("energies must be (K, len(grid)) with one alpha per energy")
        if not np.all(np.isfinite(e)) or np.any(a < 0):
            raise TheoryError("energies must be finite and alphas non-negative")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "alphas", a)


def _normalize(values, grid) -> np.ndarray:
    z = np.trapezoid(values, grid)
    if not np.isfinite(z) or z <= 0:
        raise NonFiniteDensity(f"normalizer {z!r}")
    return values / z


def poe_check(es: EnergySet) -> float:
    """Max pointwise gap between the additive-energy and product-of-experts densities."""
    e = es.energies
    shift = e.min(axis=1, keepdims=True)  # constant shifts cancel after normalization
    additive = _normalize(np.exp(-(es.alphas @ (e - shift))), es.grid)
    experts = np.array([_normalize(np.exp(-(row - row.min())), es.grid) for row in e])
    product = _normalize(np.prod(experts ** es.alphas[:, None], axis=0), es.grid)
    if not (np.all(np.isfinite(additive)) and np.all(np.isfinite(product))):
        raise NonFiniteDensity("density has non-finite entries")
    return float(np.max(np.abs(additive - product)))


def random_energy_set(rng: np.random.Generator, K: int = 3, n_grid: int = 4001,
                      half_width: float = 12.0) -> EnergySet:
    """Smooth confining energies: quadratic wells plus bounded ripples."""
    grid = np.linspace(-half_width, half_width, n_grid)
    rows = []
    for _ in range(K):
        a = rng.uniform(0.3, 2.0)
        c = rng.uniform(-2.0, 2.0)
        b, w, ph = rng.uniform(0.0, 1.0), rng.uniform(0.5, 3.0), rng.uniform(0.0, 2 * np.pi)
        rows.append(0.5 * a * (grid - c) ** 2 + b * np.sin(w * grid + ph))
    return EnergySet(grid, np.array(rows), rng.uniform(0.2, 2.0, K))


def closure_complete(codes) -> frozenset:
    """Close a set of K-tuples under single-block recombination until a fixpoint."""
    current = {tuple(c) for c in codes}
    if not current:
        return frozenset()
    K = len(next(iter(current)))
    if any(len(c) != K for c in current):
        raise TheoryError("codes must all have the same number of blocks")
    while True:
        new = set()
        for z, w in itertools.product(current, repeat=2):
            for k in range(K):
                cand = z[:k] + (w[k],) + z[k + 1:]
                if cand not in current:
                    new.add(cand)
        if not new:
            return frozenset(current)
        current |= new


def projection_product(codes) -> frozenset:
    codes = [tuple(c) for c in codes]
    if not codes:
        return frozenset()
    proj = [sorted({c[k] for c in codes}) for k in range(len(codes[0]))]
    return frozenset(itertools.product(*proj))


def mi_contraction(joint: DiscreteJoint, alpha: float, tol: float = 1e-12) -> tuple[float, float]:
    """Returns ``(I(mixture), alpha * I(joint))``; raises if the bound is broken."""
    if not 0.0 <= alpha <= 1.0:
        raise TheoryError("alpha must lie in [0, 1]")
    p = joint.pmf
    indep = np.outer(p.sum(axis=1), p.sum(axis=0))
    lhs = mi_from_joint(alpha * p + (1.0 - alpha) * indep)
    bound = alpha * mi_from_joint(p)
    if lhs > bound + tol:
        raise ContractionViolation(f"I = {lhs!r} exceeds alpha * I = {bound!r}")
    return lhs, bound


def mask_alpha(policy: str, K: int, i: int, j: int) -> float:
    """Probability that two mask bits agree under a mask policy."""
    if policy not in POLICIES:
        raise TheoryError(f"unknown policy {policy!r}")
    if i == j or not (0 <= i < K and 0 <= j < K):
        raise TheoryError("need distinct indices inside [0, K)")
    if policy == "iid-half":
        return 0.5
    if K < 2:
        raise TheoryError("policy 'proper' needs K >= 2")
    legal = [m for m in itertools.product((0, 1), repeat=K) if 0 < sum(m) < K]
    return sum(m[i] == m[j] for m in legal) / len(legal)


def _check_q(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or np.any(q < 0) or abs(q.sum() - 1.0) > 1e-12:
        raise TheoryError("bin distribution must be non-negative and sum to 1")
    return q


def expected_coverage(q, n: int) -> float:
    q = _check_q(q)
    if n < 1:
        raise TheoryError("n must be >= 1")
    if n == 1:
        return float(np.sum(q))
    with np.errstate(divide="ignore"):  # q == 1 gives log1p(-1) = -inf, which is exact here
        return float(np.sum(-np.expm1(n * np.log1p(-np.minimum(q, 1.0)))))


def coverage_variance(q, n: int) -> float:
    """Exact variance of the number of distinct bins hit by n draws."""
    q = _check_q(q)
    miss = (1.0 - q) ** n
    hit = 1.0 - miss
    both_miss = (1.0 - q[:, None] - q[None, :]).clip(0.0) ** n
    both_hit = 1.0 - miss[:, None] - miss[None, :] + both_miss
    cov = both_hit - np.outer(hit, hit)
    np.fill_diagonal(cov, hit * (1.0 - hit))
    return float(max(cov.sum(), 0.0))


def coverage_sim(q, n: int, trials: int, seed: int) -> tuple[float, float]:
    """Monte Carlo mean (and standard error) of distinct bins hit by n draws."""
    q = _check_q(q)
    if trials < 1 or n < 1:
        raise TheoryError("trials and n must be >= 1")
    rng = stream(seed, "coverage-sim")
    draws = rng.choice(len(q), size=(trials, n), p=q / q.sum())
    hit = np.zeros((trials, len(q)), dtype=bool)
    hit[np.arange(trials)[:, None], draws] = True
    counts = hit.sum(axis=1)
    return float(counts.mean()), float(counts.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0


@dataclass(frozen=True)
class CoverageFamily:
    """Failure mass decays with lambda while success mass concentrates.

    ``m_f(lam) = failure_mass0 * exp(-lam / failure_scale)`` spread evenly over
    the failure bins; success bins get softmax weights ``exp(-kappa(lam) * j)``
    with ``kappa(lam) = concentration_rate * lam``.
    """
    n_failure: int = 3
    n_success: int = 60
    failure_mass0: float = 0.8
    failure_scale: float = 0.3
    concentration_rate: float = 0.5

    def __call__(self, lam: float) -> np.ndarray:
        mf = self.failure_mass0 * np.exp(-lam / self.failure_scale)
        w = np.exp(-self.concentration_rate * lam * np.arange(self.n_success))
        q = np.concatenate([np.full(self.n_failure, mf / self.n_failure), (1.0 - mf) * w / w.sum()])
        return q / q.sum()


DEFAULT_LAMBDA_GRID = tuple(np.linspace(0.0, 4.0, 9))


def inverted_u_demo(family: Callable[[float], np.ndarray] | None = None, lam_grid=DEFAULT_LAMBDA_GRID,
                    n: int = 50, check: bool = True) -> dict:
    """Coverage table over a lambda grid; flags whether the maximum is interior."""
    family = family or CoverageFamily()
    cov = [expected_coverage(family(float(l)), n) for l in lam_grid]
    best = int(np.argmax(cov))
    flat = np.ptp(cov) < 1e-12
    interior = (0 < best < len(cov) - 1) and not flat
    if check and not flat and not interior:
        raise TheoryError(f"coverage maximum at the grid edge (index {best})")
    return {"lam": [float(l) for l in lam_grid], "coverage": cov, "argmax": best,
            "interior_max": interior, "flat": bool(flat), "illustrative": True}


@dataclass
class TheoryManifest:
    seed: int
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def add(self, name: str, passed: bool, **measured) -> None:
        self.checks[name] = {"passed": bool(passed), **measured}

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "passed": self.passed, "checks": self.checks},
                          indent=2, sort_keys=True) + "\n"


def random_joint(rng: np.random.Generator, max_side: int = 5) -> DiscreteJoint:
    m, n = rng.integers(2, max_side + 1, 2)
    p = rng.dirichlet(np.full(m * n, 0.5)).reshape(m, n)
    p = p / p.sum()
    p[-1, -1] += 1.0 - p.sum()
    return DiscreteJoint(p)


def run_theory_checks(seed: int = 0, n_joints: int = 1000, n_closure: int = 200, n_poe: int = 50,
                      n_coverage: int = 20, coverage_trials: int = 10_000,
                      extra_joints=()) -> TheoryManifest:
    """All theory checks with measured discrepancies."""
    man = TheoryManifest(seed)
    rng = stream(seed, "theory")

    alphas = np.linspace(0.0, 1.0, 11)
    worst, eq_gap, violations = -np.inf, 0.0, 0
    joints = [random_joint(rng) for _ in range(n_joints)] + [DiscreteJoint(j) for j in extra_joints]
    for joint in joints:
        for a in alphas:
            try:
                lhs, bound = mi_contraction(joint, float(a), tol=np.inf)
            except ContractionViolation:  # pragma: no cover - tol=inf never raises
                raise
            worst = max(worst, lhs - bound)
            violations += lhs > bound + 1e-12
            if a == 1.0:
                eq_gap = max(eq_gap, abs(lhs - bound))
    man.add("mi_contraction", violations == 0 and eq_gap <= 1e-12, joints=len(joints),
            alphas=len(alphas), violations=int(violations), worst_excess=float(worst),
            equality_gap_at_alpha_1=float(eq_gap))

    mismatches = 0
    for _ in range(n_closure):
        K = 3
        n_codes = int(rng.integers(1, 6))
        codes = [tuple(int(v) for v in rng.integers(0, 4, K)) for _ in range(n_codes)]
        mismatches += closure_complete(codes) != projection_product(codes)
    man.add("closure", mismatches == 0, instances=n_closure, mismatches=int(mismatches))

    poe = [poe_check(random_energy_set(rng, K=int(rng.integers(1, 5)))) for _ in range(n_poe)]
    man.add("poe", max(poe) < 1e-9, instances=n_poe, max_discrepancy=float(max(poe)))

    worst_z, fails = 0.0, 0
    for i in range(n_coverage):
        B = int(rng.integers(2, 30))
        q = rng.dirichlet(np.full(B, 0.7))
        q[-1] = 1.0 - q[:-1].sum()
        q = np.clip(q, 0.0, None)
        q = q / q.sum()
        n = int(rng.integers(1, 51))
        exact = expected_coverage(q, n)
        mean, _ = coverage_sim(q, n, coverage_trials, seed + 7919 * i)
        se = np.sqrt(coverage_variance(q, n) / coverage_trials)
        z = abs(mean - exact) / se if se > 0 else (0.0 if abs(mean - exact) < 1e-12 else np.inf)
        worst_z = max(worst_z, z)
        fails += z > 3.0
    man.add("coverage_mc", fails == 0, pairs=n_coverage, trials=coverage_trials,
            max_abs_z=float(worst_z), failures=int(fails))

    q = rng.dirichlet(np.ones(10))
    q = q / q.sum()
    n1 = [expected_coverage(q, 1), coverage_sim(q, 1, 1000, seed)[0]]
    man.add("coverage_n1", all(v == 1.0 for v in n1), values=n1)

    demo = inverted_u_demo(check=False)
    man.add("inverted_u", demo["interior_max"], argmax=demo["argmax"], coverage=demo["coverage"])
    return man
