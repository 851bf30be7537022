"""Adversarial training of a linear reparameterization W on the synthetic data.

Each iteration takes one Adam step on an MLP discriminator (real decoded
observations vs. recombinations in ``W z`` coordinates) followed by one Adam
step on W, which tries to make recombinations look real while a weak
penalty keeps ``W^T W`` near the identity.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from . import mlp
from .metrics import MetricsReport, fit_gaussian, full_report
from .numerics import AdamState, adam_step
from .recombine import IllConditioned, Reparam, reparam_recombine_decode, reparam_recombine_grad, sample_masks
from .seeding import derive_seed, stream
from .synthdata import Dataset

DISC_SIZES = (4, 64, 64, 1)
PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class SynthTrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    iterations: int = 5000
    ortho_weight: float = 1e-2
    mask_policy: str = "iid-half"
    seed: int = 0
    init_noise: float = 0.01
    eval_every: int = 50
    eval_pairs: int = 20000

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.ortho_weight < 0:
            raise ValueError("learning_rate and batch_size must be positive, ortho_weight >= 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    def seeds(self) -> dict:
        return {p: derive_seed(self.seed, p) for p in ("w-init", "disc-init", "batches", "eval")}


@dataclass
class SynthTrainReport:
    config: dict
    seeds: dict
    disc_loss: list = field(default_factory=list)
    w_loss: list = field(default_factory=list)
    ortho_penalty: list = field(default_factory=list)
    disc_accuracy: list = field(default_factory=list)  # (iteration, held-out accuracy)
    initial_metrics: MetricsReport | None = None
    final_metrics: MetricsReport | None = None
    naive_metrics: MetricsReport | None = None
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        """Serializable form; wall-clock time is left out so reports are reproducible."""
        return {
            "config": self.config,
            "seeds": {k: str(v) for k, v in self.seeds.items()},
            "disc_loss": self.disc_loss,
            "w_loss": self.w_loss,
            "ortho_penalty": self.ortho_penalty,
            "disc_accuracy": [list(p) for p in self.disc_accuracy],
            "initial_metrics": self.initial_metrics.to_dict() if self.initial_metrics else None,
            "final_metrics": self.final_metrics.to_dict() if self.final_metrics else None,
            "naive_metrics": self.naive_metrics.to_dict() if self.naive_metrics else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def init_discriminator(seed: int, sizes=DISC_SIZES) -> mlp.MlpParams:
    return mlp.init_mlp(stream(seed, "disc"), sizes)


def disc_logits(params: mlp.MlpParams, x) -> np.ndarray:
    out, _ = mlp.forward(params, np.atleast_2d(x))
    return out[:, 0]


def disc_forward(params: mlp.MlpParams, x) -> np.ndarray:
    """Discriminator probability that each row of ``x`` is real."""
    return expit(disc_logits(params, x))


def _nll(p: np.ndarray) -> np.ndarray:
    return -np.log(np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP))


def _unclamped(p: np.ndarray) -> np.ndarray:
    # the clamped log is flat outside [PROB_CLAMP, 1 - PROB_CLAMP]
    return ((p >= PROB_CLAMP) & (p <= 1.0 - PROB_CLAMP)).astype(np.float64)


def disc_loss_grad(params: mlp.MlpParams, reals, fakes) -> tuple[float, np.ndarray]:
    """BCE of real-vs-fake classification and its gradient in ``params.theta``."""
    reals, fakes = np.atleast_2d(reals), np.atleast_2d(fakes)
    if len(reals) == 0 or len(fakes) == 0:
        raise ValueError("empty batch")
    x = np.vstack([reals, fakes])
    out, cache = mlp.forward(params, x)
    p = expit(out[:, 0])
    nr = len(reals)
    loss = _nll(p[:nr]).mean() + _nll(1.0 - p[nr:]).mean()
    dlogit = np.empty_like(p)
    dlogit[:nr] = (p[:nr] - 1.0) / nr
    dlogit[nr:] = p[nr:] / len(fakes)
    dlogit *= _unclamped(p)
    grad, _ = mlp.backward(params, cache, dlogit[:, None])
    return float(loss), grad


def ortho_penalty(W) -> float:
    r = W.T @ W - np.eye(len(W))
    return float(np.sum(r * r))


def adversarial_input_grad(disc: mlp.MlpParams, x) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample ``-log D(x)`` and its gradient with respect to ``x``."""
    out, cache = mlp.forward(disc, x)
    p = expit(out[:, 0])
    _, gx = mlp.backward(disc, cache, ((p - 1.0) * _unclamped(p))[:, None], need_input_grad=True)
    return _nll(p), gx


def w_loss_grad(rep: Reparam, zA, zB, masks, disc: mlp.MlpParams, M, ortho_weight: float):
    """Adversarial loss of W plus the orthogonality penalty, with gradient."""
    xhat = reparam_recombine_decode(zA, zB, masks, rep, M)
    nll, gx = adversarial_input_grad(disc, xhat)
    n = len(xhat)
    grad = reparam_recombine_grad(zA, zB, masks, rep, M, gx / n)
    W = rep.W
    grad = grad + 4.0 * ortho_weight * W @ (W.T @ W - np.eye(len(W)))
    return float(nll.mean() + ortho_weight * ortho_penalty(W)), grad


def recombined_eval_set(data: Dataset, rep: Reparam, seed: int, n_pairs: int, policy: str = "proper"):
    rng = stream(seed, "eval-pairs")
    n = len(data)
    ia, ib = rng.integers(0, n, n_pairs), rng.integers(0, n, n_pairs)
    masks = sample_masks(rng, n_pairs, 3, policy)
    return reparam_recombine_decode(data.entangled[ia], data.entangled[ib], masks, rep, data.spec.M)


def evaluate(data: Dataset, rep: Reparam, seed: int = 0, n_pairs: int = 20000) -> MetricsReport:
    """Metrics of ``W z`` against the factors and of recombinations against real data."""
    ref = fit_gaussian(data.observations)
    fakes = recombined_eval_set(data, rep, seed, n_pairs)
    latents = data.entangled @ rep.W.T
    return full_report(latents, data.factors, fakes, ref, seed=seed)


def disc_accuracy(disc: mlp.MlpParams, reals, fakes) -> float:
    pr, pf = disc_forward(disc, reals), disc_forward(disc, fakes)
    return float(0.5 * (np.mean(pr > 0.5) + np.mean(pf <= 0.5)))


def initial_reparam(config: SynthTrainConfig) -> Reparam:
    rng = stream(config.seed, "w-init")
    return Reparam(np.eye(6) + config.init_noise * rng.standard_normal((6, 6)))


def train_synthetic(config: SynthTrainConfig, data: Dataset, *, evaluate_metrics: bool = True):
    """Alternating discriminator / W training. Returns ``(rep, disc, report)``."""
    n = len(data)
    if n < config.batch_size:
        raise ValueError("dataset smaller than batch size")
    t0 = time.perf_counter()
    M = data.spec.M
    rep = initial_reparam(config)
    disc = init_discriminator(config.seed)
    d_state, w_state = AdamState(disc.n_params), AdamState(36)
    report = SynthTrainReport(config=asdict(config), seeds=config.seeds())
    rng = stream(config.seed, "batches")
    hold = stream(config.seed, "held-out")
    B = config.batch_size
    h_real = data.observations[hold.integers(0, n, 1024)]
    h_pairs = (hold.integers(0, n, 1024), hold.integers(0, n, 1024), sample_masks(hold, 1024, 3, "proper"))

    if evaluate_metrics:
        report.initial_metrics = evaluate(data, rep, config.seed, config.eval_pairs)
        report.naive_metrics = evaluate(data, Reparam(np.eye(6)), config.seed, config.eval_pairs)

    for it in range(config.iterations):
        ir, ia, ib = (rng.integers(0, n, B) for _ in range(3))
        masks = sample_masks(rng, B, 3, config.mask_policy)
        zA, zB = data.entangled[ia], data.entangled[ib]
        fakes = reparam_recombine_decode(zA, zB, masks, rep, M)
        d_loss, d_grad = disc_loss_grad(disc, data.observations[ir], fakes)
        theta, d_state = adam_step(d_state, disc.theta, d_grad, config.learning_rate)
        disc = disc.with_theta(theta)

        w_loss, w_grad = w_loss_grad(rep, zA, zB, masks, disc, M, config.ortho_weight)
        w_new, w_state = adam_step(w_state, rep.W.ravel(), w_grad.ravel(), config.learning_rate)
        try:
            rep = Reparam(w_new.reshape(6, 6))
        except IllConditioned as exc:
            raise IllConditioned(f"iteration {it}: {exc}") from exc
        report.disc_loss.append(d_loss)
        report.w_loss.append(w_loss)
        report.ortho_penalty.append(ortho_penalty(rep.W))
        if config.eval_every and (it + 1) % config.eval_every == 0:
            ia_h, ib_h, m_h = h_pairs
            h_fake = reparam_recombine_decode(data.entangled[ia_h], data.entangled[ib_h], m_h, rep, M)
            report.disc_accuracy.append((it + 1, disc_accuracy(disc, h_real, h_fake)))

    if evaluate_metrics:
        report.final_metrics = evaluate(data, rep, config.seed, config.eval_pairs)
    report.wall_clock = time.perf_counter() - t0
    return rep, disc, report
