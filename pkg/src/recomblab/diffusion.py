"""Factorized, latent-conditioned x0-prediction diffusion on the 4-D observations.

An encoder maps ``x`` to K latent blocks; the denoiser prediction is the mean
of per-block passes ``G(x_t, t, z_k)``. Training follows the alternating
scheme: reconstruction on single-source predictions, a discriminator that
separates single-source from recombined one-step predictions (both computed
from the same noisy input of source A), and an adversarial term weighted by
``lam`` on the generator side. Inference is deterministic DDIM.

The model works on standardized observations; ``data_mean``/``data_std``
convert back to observation space.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import mlp
from .metrics import fit_gaussian, frechet_gaussian, mahalanobis2
from .numerics import AdamState, adam_step
from .recombine import sample_masks
from .seeding import derive_seed, stream
from .synthtrain import adversarial_input_grad, disc_loss_grad

X_DIM = 4
EMB_DIM = 8


@dataclass(frozen=True)
class Schedule:
    T: int
    alpha_bar: np.ndarray
    s: float = 0.008

    def __post_init__(self):
        ab = self.alpha_bar
        if len(ab) != self.T + 1 or ab[0] != 1.0 or np.any(np.diff(ab) >= 0):
            raise ValueError("alpha_bar must have T+1 strictly decreasing entries starting at 1")


def cosine_schedule(T: int, s: float = 0.008) -> Schedule:
    if T < 2:
        raise ValueError("T must be >= 2")
    t = np.arange(T + 1, dtype=np.float64)
    g = np.cos((t / T + s) / (1.0 + s) * np.pi / 2.0) ** 2
    raw = g / g[0]
    ab = np.empty(T + 1)
    ab[0] = 1.0
    for i in range(1, T + 1):
        ab[i] = ab[i - 1] * max(raw[i] / raw[i - 1], 0.001)
    return Schedule(T, ab, s)


def time_embedding(t, T: int) -> np.ndarray:
    """Sinusoidal features of t/T at 4 frequencies geometric from 1 to T."""
    tau = np.asarray(t, dtype=np.float64).reshape(-1, 1) / T
    freqs = np.geomspace(1.0, T, EMB_DIM // 2)
    return np.hstack([np.sin(tau * freqs), np.cos(tau * freqs)])


def forward_diffuse(x0, t, eps, sched: Schedule) -> np.ndarray:
    ab = sched.alpha_bar[np.asarray(t)]
    ab = np.reshape(ab, np.shape(ab) + (1,) * (np.ndim(x0) - np.ndim(ab)))
    return np.sqrt(ab) * np.asarray(x0) + np.sqrt(1.0 - ab) * np.asarray(eps)


@dataclass(frozen=True)
class DiffusionConfig:
    T: int = 1000
    lam: float = 0.0
    lr: float = 1e-3
    disc_lr: float = 1e-3
    batch_size: int = 128
    iterations: int = 5000
    ddim_steps: int = 50
    K: int = 3
    latent_dim: int = 2
    hidden: int = 128
    disc_hidden: int = 64
    mask_policy: str = "iid-half"
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not 1 <= self.ddim_steps <= self.T:
            raise ValueError("ddim_steps must lie in [1, T]")
        if self.batch_size < 1 or self.iterations < 0 or self.K < 1:
            raise ValueError("batch_size, K must be positive and iterations >= 0")


@dataclass
class DiffusionState:
    enc: mlp.MlpParams
    den: mlp.MlpParams
    disc: mlp.MlpParams
    gen_adam: AdamState
    disc_adam: AdamState
    sched: Schedule
    K: int
    latent_dim: int
    data_mean: np.ndarray
    data_std: np.ndarray
    step: int = 0

    def gen_theta(self) -> np.ndarray:
        return np.concatenate([self.enc.theta, self.den.theta])

    def with_gen_theta(self, theta) -> tuple[mlp.MlpParams, mlp.MlpParams]:
        n = self.enc.n_params
        return self.enc.with_theta(theta[:n]), self.den.with_theta(theta[n:])


def init_state(config: DiffusionConfig, observations) -> DiffusionState:
    obs = np.asarray(observations, dtype=np.float64)
    h, d = config.hidden, config.latent_dim
    enc = mlp.init_mlp(stream(config.seed, "enc-init"), (X_DIM, h, h, config.K * d))
    den = mlp.init_mlp(stream(config.seed, "den-init"), (X_DIM + EMB_DIM + d, h, h, X_DIM))
    dh = config.disc_hidden
    disc = mlp.init_mlp(stream(config.seed, "disc-init"), (X_DIM, dh, dh, 1))
    return DiffusionState(
        enc=enc, den=den, disc=disc,
        gen_adam=AdamState(enc.n_params + den.n_params), disc_adam=AdamState(disc.n_params),
        sched=cosine_schedule(config.T), K=config.K, latent_dim=d,
        data_mean=obs.mean(axis=0), data_std=obs.std(axis=0),
    )


def standardize(state: DiffusionState, x) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - state.data_mean) / state.data_std


def unstandardize(state: DiffusionState, x) -> np.ndarray:
    return np.asarray(x) * state.data_std + state.data_mean


def encode(enc: mlp.MlpParams, x, K: int = 3) -> np.ndarray:
    """Latent blocks of shape ``(n, K, d)`` for inputs ``(n, 4)``."""
    out, _ = mlp.forward(enc, np.atleast_2d(x))
    return out.reshape(len(out), K, -1)


def _den_inputs(x_t, t, latents, T: int) -> np.ndarray:
    """Stack per-latent denoiser inputs: rows ordered latent-major, ``(L*n, 4+8+d)``."""
    n, L, _ = latents.shape
    base = np.hstack([x_t, time_embedding(np.broadcast_to(t, (n,)), T)])
    return np.concatenate([np.hstack([base, latents[:, k]]) for k in range(L)])


def denoise_composed(den: mlp.MlpParams, x_t, t, latents, T: int) -> np.ndarray:
    """Mean over latents of the conditional x0 predictions.

    ``latents`` is ``(n, L, d)``; ``t`` is a scalar or per-row array.
    """
    x_t = np.atleast_2d(x_t)
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim == 2:
        latents = latents[None]
    L = latents.shape[1]
    if L < 1:
        raise ValueError("empty latent set")
    out, _ = mlp.forward(den, _den_inputs(x_t, t, latents, T))
    return out.reshape(L, len(x_t), X_DIM).mean(axis=0)


def _generator_forward(enc, den, xA, xB, masks, t, eps, sched: Schedule, K: int) -> dict:
    n = len(xA)
    zz, enc_cache = mlp.forward(enc, np.vstack([xA, xB]))
    zA, zB = zz[:n].reshape(n, K, -1), zz[n:].reshape(n, K, -1)
    keep = np.asarray(masks, dtype=np.float64)[:, :, None]
    z_mix = keep * zA + (1.0 - keep) * zB
    x_t = forward_diffuse(xA, t, eps, sched)
    inp = np.concatenate([_den_inputs(x_t, t, zA, sched.T), _den_inputs(x_t, t, z_mix, sched.T)])
    out, den_cache = mlp.forward(den, inp)
    outs = out.reshape(2, K, n, X_DIM)
    return {"enc_cache": enc_cache, "den_cache": den_cache, "keep": keep, "d": zA.shape[2],
            "x_single": outs[0].mean(axis=0), "x_recomb": outs[1].mean(axis=0)}


def _generator_backward(enc, den, disc, fw: dict, xA, lam: float, K: int):
    n = len(xA)
    diff = fw["x_single"] - xA
    l_rec = float(np.mean(np.sum(diff * diff, axis=1)))
    g_single = 2.0 * diff / n
    g_recomb = np.zeros_like(diff)
    l_adv = float("nan")
    if lam > 0:
        nll, gx = adversarial_input_grad(disc, fw["x_recomb"])
        l_adv = float(nll.mean())
        g_recomb = lam * gx / n
    g_out = np.concatenate([np.broadcast_to(g_single / K, (K, n, X_DIM)),
                            np.broadcast_to(g_recomb / K, (K, n, X_DIM))]).reshape(-1, X_DIM)
    grad_den, g_in = mlp.backward(den, fw["den_cache"], g_out, need_input_grad=True)
    d, keep = fw["d"], fw["keep"]
    g_lat = g_in[:, -d:].reshape(2, K, n, d).transpose(0, 2, 1, 3)  # (2, n, K, d)
    g_zA = g_lat[0] + keep * g_lat[1]
    g_zB = (1.0 - keep) * g_lat[1]
    grad_enc, _ = mlp.backward(enc, fw["enc_cache"], np.vstack([g_zA.reshape(n, -1), g_zB.reshape(n, -1)]))
    return l_rec, l_adv, grad_enc, grad_den


def generator_loss_grad(enc, den, disc, xA, xB, masks, t, eps, sched: Schedule, lam: float, K: int):
    """Losses and generator gradients for one batch with fixed randomness.

    Returns ``(l_rec, l_adv, grad_enc, grad_den, x_single, x_recomb)``; with
    ``lam == 0`` the discriminator is never evaluated and ``l_adv`` is NaN.
    """
    fw = _generator_forward(enc, den, xA, xB, masks, t, eps, sched, K)
    l_rec, l_adv, g_enc, g_den = _generator_backward(enc, den, disc, fw, xA, lam, K)
    return l_rec, l_adv, g_enc, g_den, fw["x_single"], fw["x_recomb"]


def train_step(state: DiffusionState, xA, xB, config: DiffusionConfig, rng: np.random.Generator,
               lr: float | None = None, disc_lr: float | None = None):
    """One iteration on standardized batches ``xA``, ``xB``. Returns ``(state, losses)``."""
    lr = config.lr if lr is None else lr
    disc_lr = config.disc_lr if disc_lr is None else disc_lr
    n = len(xA)
    masks = sample_masks(rng, n, state.K, config.mask_policy)
    t = rng.integers(1, state.sched.T + 1, n)
    eps = rng.standard_normal((n, X_DIM))

    fw = _generator_forward(state.enc, state.den, xA, xB, masks, t, eps, state.sched, state.K)
    d_loss, d_grad = disc_loss_grad(state.disc, fw["x_single"], fw["x_recomb"])
    d_theta, disc_adam = adam_step(state.disc_adam, state.disc.theta, d_grad, disc_lr)
    disc = state.disc.with_theta(d_theta)

    # generator side sees the updated discriminator
    l_rec, l_adv, g_enc, g_den = _generator_backward(state.enc, state.den, disc, fw, xA, config.lam, state.K)
    g_theta, gen_adam = adam_step(state.gen_adam, state.gen_theta(), np.concatenate([g_enc, g_den]), lr)
    enc, den = state.with_gen_theta(g_theta)
    new = replace(state, enc=enc, den=den, disc=disc, gen_adam=gen_adam, disc_adam=disc_adam,
                  step=state.step + 1)
    return new, {"l_rec": l_rec, "l_adv": l_adv, "disc_loss": d_loss}


@dataclass
class TrainingCurves:
    l_rec: list = field(default_factory=list)
    l_adv: list = field(default_factory=list)
    disc_loss: list = field(default_factory=list)

    def append(self, losses: dict) -> None:
        self.l_rec.append(losses["l_rec"])
        self.l_adv.append(losses["l_adv"])
        self.disc_loss.append(losses["disc_loss"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "l_rec", "l_adv", "disc_loss"])
        for i, row in enumerate(zip(self.l_rec, self.l_adv, self.disc_loss), start=1):
            w.writerow([i] + [repr(float(v)) for v in row])
        return buf.getvalue()


def train_diffusion(config: DiffusionConfig, observations, state: DiffusionState | None = None):
    """Full training loop. Returns ``(state, curves)``."""
    obs = np.asarray(observations, dtype=np.float64)
    if len(obs) < 2:
        raise ValueError("need at least two observations")
    state = state or init_state(config, obs)
    xs = standardize(state, obs)
    rng = stream(config.seed, "diffusion-train")
    curves = TrainingCurves()
    n, B = len(xs), config.batch_size
    for _ in range(config.iterations):
        ia, ib = rng.integers(0, n, B), rng.integers(0, n, B)
        state, losses = train_step(state, xs[ia], xs[ib], config, rng)
        curves.append(losses)
    return state, curves


def ddim_timesteps(T: int, steps: int) -> np.ndarray:
    if not 1 <= steps <= T:
        raise ValueError("steps must lie in [1, T]")
    return np.unique(np.round(np.linspace(T, 1, steps)).astype(int))[::-1]


def ddim_sample(den: mlp.MlpParams, latents, sched: Schedule, steps: int, seed: int,
                predictor=None) -> np.ndarray:
    """Deterministic DDIM (eta = 0) conditioned on a latent set ``(n, L, d)``.

    ``predictor(x_t, t)`` overrides the network, mainly for testing.
    Returns samples in the model's (standardized) space.
    """
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim == 2:
        latents = latents[None]
    n = latents.shape[0]
    if latents.shape[1] < 1:
        raise ValueError("empty latent set")
    x = stream(seed, "ddim-init").standard_normal((n, X_DIM))
    ts = ddim_timesteps(sched.T, steps)
    nxt = np.append(ts[1:], 0)
    for t, t_prev in zip(ts, nxt):
        x0 = predictor(x, t) if predictor else denoise_composed(den, x, t, latents, sched.T)
        ab, ab_prev = sched.alpha_bar[t], sched.alpha_bar[t_prev]
        eps = (x - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)
        x = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps
    return x


MODES = ("decompose", "reconstruct", "recombine", "additive")


def latent_set(mode: str, zA, zB=None, k: int | None = None, mask=None) -> np.ndarray:
    """Conditioning set ``(n, L, d)`` for an inference mode.

    decompose: the single block ``k`` of ``zA``; reconstruct: all of ``zA``;
    recombine: per-block choice between ``zA`` (mask 1) and ``zB``;
    additive: all 2K blocks of both sources.
    """
    zA = np.asarray(zA, dtype=np.float64)
    if mode == "decompose":
        if k is None:
            raise ValueError("decompose needs a block index")
        out = zA[:, k:k + 1]
    elif mode == "reconstruct":
        out = zA
    elif mode == "recombine":
        keep = np.broadcast_to(np.asarray(mask, dtype=np.float64), zA.shape[:2])[:, :, None]
        out = keep * zA + (1.0 - keep) * np.asarray(zB)
    elif mode == "additive":
        out = np.concatenate([zA, np.asarray(zB)], axis=1)
    else:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if out.shape[1] == 0:
        raise ValueError("empty latent set")
    return out


def inference(state: DiffusionState, mode: str, xA, xB=None, *, k=None, mask=None,
              steps: int = 50, seed: int = 0) -> np.ndarray:
    """Encode sources, build the latent set for ``mode`` and sample (observation space)."""
    zA = encode(state.enc, standardize(state, xA), state.K)
    zB = encode(state.enc, standardize(state, xB), state.K) if xB is not None else None
    lat = latent_set(mode, zA, zB, k=k, mask=mask)
    return unstandardize(state, ddim_sample(state.den, lat, state.sched, steps, seed))


def evaluate_recombination(state: DiffusionState, observations, n_samples: int = 2000,
                           steps: int = 50, seed: int = 0) -> dict:
    """Recombined DDIM samples scored against the real-data Gaussian."""
    obs = np.asarray(observations, dtype=np.float64)
    rng = stream(seed, "recomb-eval")
    ia, ib = rng.integers(0, len(obs), n_samples), rng.integers(0, len(obs), n_samples)
    masks = sample_masks(rng, n_samples, state.K, "proper")
    samples = inference(state, "recombine", obs[ia], obs[ib], mask=masks, steps=steps, seed=seed)
    ref = fit_gaussian(obs)
    return {"mahalanobis2": mahalanobis2(samples, ref), "frechet": frechet_gaussian(obs, samples)}


def reconstruction_rms(state: DiffusionState, observations, steps: int = 50, seed: int = 0) -> np.ndarray:
    x = np.asarray(observations, dtype=np.float64)
    rec = inference(state, "reconstruct", x, steps=steps, seed=seed)
    return np.sqrt(np.mean((rec - x) ** 2, axis=1))


def smoothed_rec_ratio(l_rec, window: int = 100) -> float:
    """Mean of the last ``window`` reconstruction losses over the first ``window``."""
    l = np.asarray(l_rec, dtype=np.float64)
    return float(l[-window:].mean() / l[:window].mean())


SWEEP_COLUMNS = ("lam", "seed", "mahalanobis2", "frechet", "final_l_rec", "rec_ratio",
                 "train_seed", "eval_seed")


def lambda_sweep(observations, lams, config: DiffusionConfig, seeds=(0,), n_eval: int = 2000) -> list[dict]:
    """Train one model per (lambda, seed) and score its recombinations."""
    lams = list(lams)
    if not lams:
        raise ValueError("lambda list is empty")
    rows = []
    for seed in seeds:
        for lam in lams:
            cfg = replace(config, lam=float(lam), seed=int(seed))
            state, curves = train_diffusion(cfg, observations)
            ev = evaluate_recombination(state, observations, n_eval, cfg.ddim_steps, seed)
            rows.append({
                "lam": float(lam), "seed": int(seed),
                "mahalanobis2": ev["mahalanobis2"], "frechet": ev["frechet"],
                "final_l_rec": float(np.mean(curves.l_rec[-100:])) if curves.l_rec else float("nan"),
                "rec_ratio": smoothed_rec_ratio(curves.l_rec) if len(curves.l_rec) >= 100 else float("nan"),
                "train_seed": str(derive_seed(seed, "diffusion-train")),
                "eval_seed": str(derive_seed(seed, "recomb-eval")),
            })
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([r[c] if isinstance(r[c], str) else repr(r[c]) for c in SWEEP_COLUMNS])
    return buf.getvalue()


def config_dict(config: DiffusionConfig) -> dict:
    return asdict(config)
