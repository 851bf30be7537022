"""Blockwise latent recombination in entangled and reparameterized coordinates.

Codes are 6-vectors made of three contiguous 2-coordinate blocks. Every
function accepts a single code or a batch with codes in the last axis; masks
are ``(K,)`` or ``(n, K)`` arrays of 0/1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import NumericsError, Singular, invert_small
from .seeding import stream
from .synthdata import decode, decode_jacobian

BLOCK = 2
K_BLOCKS = 3
POLICIES = ("iid-half", "proper")


class IllConditioned(NumericsError):
    pass


@dataclass
class Reparam:
    W: np.ndarray
    W_inv: np.ndarray = field(default=None)

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64)
        self.refresh()

    def refresh(self) -> None:
        try:
            inv = invert_small(self.W)
        except Singular as exc:
            raise IllConditioned(str(exc)) from exc
        if np.max(np.abs(self.W @ inv - np.eye(len(self.W)))) >= 1e-8:
            raise IllConditioned("W @ W_inv deviates from identity by more than 1e-8")
        self.W_inv = inv

    def copy(self) -> "Reparam":
        return Reparam(self.W.copy())


def sample_masks(rng: np.random.Generator, n: int, K: int, policy: str) -> np.ndarray:
    """Draw ``n`` masks of ``K`` bits each."""
    if policy not in POLICIES:
        raise ValueError(f"unknown mask policy {policy!r}")
    if K < 1:
        raise ValueError("K must be >= 1")
    if policy == "iid-half":
        return rng.integers(0, 2, (n, K)).astype(np.int8)
    if K < 2:
        raise ValueError("policy 'proper' needs K >= 2")
    # uniform over 1 .. 2^K - 2, i.e. all masks except all-zeros and all-ones
    codes = rng.integers(1, 2 ** K - 1, n)
    return ((codes[:, None] >> np.arange(K)) & 1).astype(np.int8)


def sample_mask(seed: int, K: int, policy: str = "iid-half") -> np.ndarray:
    return sample_masks(stream(seed, "mask"), 1, K, policy)[0]


def expand_mask(S, block: int = BLOCK) -> np.ndarray:
    """Block mask ``(.., K)`` to a coordinate mask ``(.., K*block)``."""
    return np.repeat(np.asarray(S, dtype=np.float64), block, axis=-1)


def mix(zA, zB, S) -> np.ndarray:
    e = expand_mask(S)
    return np.where(e > 0, np.asarray(zA, dtype=np.float64), np.asarray(zB, dtype=np.float64))


def naive_recombine_decode(zA, zB, S, M) -> np.ndarray:
    return decode(mix(zA, zB, S) @ np.asarray(M))  # row form of M^T v


def reparam_recombine_decode(zA, zB, S, rep: Reparam, M) -> np.ndarray:
    W, Wi = rep.W, rep.W_inv
    mixed = mix(np.asarray(zA) @ W.T, np.asarray(zB) @ W.T, S)
    return decode(mixed @ Wi.T @ np.asarray(M))


def reparam_recombine_grad(zA, zB, S, rep: Reparam, M, upstream) -> np.ndarray:
    """Gradient of ``sum(upstream * x_hat)`` with respect to W.

    With ``y = W^-1 mix(W zA, W zB)`` and ``a = W^-T M J^T upstream`` the
    gradient is ``-a y^T + (P a) zA^T + ((I-P) a) zB^T`` where P is the
    expanded mask. Batched inputs are summed.
    """
    zA = np.atleast_2d(np.asarray(zA, dtype=np.float64))
    zB = np.atleast_2d(np.asarray(zB, dtype=np.float64))
    up = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    P = np.broadcast_to(expand_mask(np.atleast_2d(S)), zA.shape)
    M = np.asarray(M)
    W, Wi = rep.W, rep.W_inv
    y = mix(zA @ W.T, zB @ W.T, P[:, ::BLOCK]) @ Wi.T
    s_hat = y @ M
    g_s = np.einsum("ni,nij->nj", up, decode_jacobian(s_hat))
    g_y = g_s @ M.T
    a = g_y @ Wi
    return -a.T @ y + (P * a).T @ zA + ((1.0 - P) * a).T @ zB
