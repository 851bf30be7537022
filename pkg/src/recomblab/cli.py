"""``recomblab`` command line.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 numerical abort or a
failed theory check, 5 checkpoint format error. Relative input paths are
resolved against ``--out``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import config as cfgmod
from . import diffusion as dif
from . import mlp
from .checkpoint import Checkpoint, CheckpointFormatError
from .metrics import MetricsReport, fit_gaussian, mahalanobis2
from .numerics import AdamState, NumericsError
from .recombine import Reparam, sample_masks
from .seeding import derive_seed, stream
from .synthdata import GroundTruthSpec, load_dataset, make_dataset, save_dataset
from .synthtrain import SynthTrainConfig, evaluate, train_synthetic
from .theory import CoverageFamily, DiscreteJoint, TheoryError, inverted_u_demo, run_theory_checks

log = logging.getLogger("recomblab")

COMMANDS = ("gen-data", "train-synth", "eval", "train-diffusion", "sample", "sweep", "theory", "coverage")


class ExitError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _write(path: Path, text: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _input_path(out: Path, name: str) -> Path:
    p = Path(name)
    p = p if p.is_absolute() else out / p
    if not p.exists():
        raise ExitError(3, f"input file not found: {p}")
    return p


def _load_data(out: Path, cfg: dict):
    return load_dataset(_input_path(out, cfg["input.dataset"]), _input_path(out, cfg["input.spec"]))


def _suffix(name: str, seed, multi: bool) -> str:
    if not multi:
        return name
    stem, dot, ext = name.partition(".")
    return f"{stem}_seed{seed}{dot}{ext}"


# --- checkpoints -------------------------------------------------------------

def synth_checkpoint(rep: Reparam, disc: mlp.MlpParams, meta: dict) -> Checkpoint:
    return Checkpoint(
        tensors={"W": rep.W, "disc.theta": disc.theta},
        metadata={**meta, "kind": "synth", "disc.sizes": list(disc.sizes),
                  "disc.activations": list(disc.activations)},
    )


def load_synth(ck: Checkpoint) -> tuple[Reparam, mlp.MlpParams]:
    if ck.metadata.get("kind") != "synth" or "W" not in ck.tensors:
        raise CheckpointFormatError("not a synthetic-training checkpoint")
    disc = mlp.MlpParams(ck.metadata["disc.sizes"], ck.metadata["disc.activations"], ck.tensors["disc.theta"])
    return Reparam(ck.tensors["W"]), disc


def diffusion_checkpoint(state: dif.DiffusionState, meta: dict) -> Checkpoint:
    tensors = {"data_mean": state.data_mean, "data_std": state.data_std}
    layout = {}
    for name in ("enc", "den", "disc"):
        p = getattr(state, name)
        tensors[f"{name}.theta"] = p.theta
        layout[name] = {"sizes": list(p.sizes), "activations": list(p.activations)}
    return Checkpoint(tensors, {**meta, "kind": "diffusion", "layout": layout, "T": state.sched.T,
                                "K": state.K, "latent_dim": state.latent_dim, "step": state.step})


def load_diffusion(ck: Checkpoint) -> dif.DiffusionState:
    if ck.metadata.get("kind") != "diffusion":
        raise CheckpointFormatError("not a diffusion checkpoint")
    lay = ck.metadata["layout"]
    nets = {n: mlp.MlpParams(lay[n]["sizes"], lay[n]["activations"], ck.tensors[f"{n}.theta"])
            for n in ("enc", "den", "disc")}
    return dif.DiffusionState(
        enc=nets["enc"], den=nets["den"], disc=nets["disc"],
        gen_adam=AdamState(nets["enc"].n_params + nets["den"].n_params),
        disc_adam=AdamState(nets["disc"].n_params),
        sched=dif.cosine_schedule(int(ck.metadata["T"])), K=int(ck.metadata["K"]),
        latent_dim=int(ck.metadata["latent_dim"]), data_mean=ck.tensors["data_mean"],
        data_std=ck.tensors["data_std"], step=int(ck.metadata.get("step", 0)),
    )


# --- commands ----------------------------------------------------------------

def cmd_gen_data(cfg: dict, seed: int, out: Path, **_) -> dict:
    if cfg["data.n"] < 1:
        raise cfgmod.ConfigError("data.n must be >= 1")
    means = cfg["data.bimodal_means"]
    if len(means) != 4:
        raise cfgmod.ConfigError("data.bimodal_means needs four numbers (two 2-vectors)")
    spec = GroundTruthSpec(
        ring_radius=cfg["data.ring_radius"], ring_noise=cfg["data.ring_noise"],
        square_half_width=cfg["data.square_half_width"],
        bimodal_means=((means[0], means[1]), (means[2], means[3])),
        bimodal_std=cfg["data.bimodal_std"], mixing_seed=cfg["data.mixing_seed"],
    )
    ds = make_dataset(seed, cfg["data.n"], spec)
    save_dataset(ds, out / "dataset.csv", out / "spec.json")
    return {"rows": len(ds), "files": ["dataset.csv", "spec.json"]}


def _synth_config(cfg: dict, seed: int) -> SynthTrainConfig:
    return SynthTrainConfig(
        learning_rate=cfg["train.learning_rate"], batch_size=cfg["train.batch_size"],
        iterations=cfg["train.iterations"], ortho_weight=cfg["train.ortho_weight"],
        mask_policy=cfg["train.mask_policy"], seed=seed, eval_pairs=cfg["train.eval_pairs"],
    )


def _train_synth_one(cfg: dict, seed: int, out: Path, multi: bool) -> dict:
    data = _load_data(out, cfg)
    tc = _synth_config(cfg, seed)
    rep, disc, report = train_synthetic(tc, data)
    log.info("train-synth seed %s finished in %.1fs", seed, report.wall_clock)
    meta = {"seed": seed, "config": cfg, "seeds": {k: str(v) for k, v in tc.seeds().items()}}
    ckpt_io.save(synth_checkpoint(rep, disc, meta), out / _suffix("synth.ckpt", seed, multi))
    doc = report.to_dict()
    doc["resolved_config"] = cfg
    _write(out / _suffix("synth_report.json", seed, multi), json.dumps(doc, indent=1, sort_keys=True) + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "disc_loss", "w_loss", "ortho_penalty"])
    for i, row in enumerate(zip(report.disc_loss, report.w_loss, report.ortho_penalty), start=1):
        w.writerow([i] + [repr(v) for v in row])
    _write(out / _suffix("synth_losses.csv", seed, multi), buf.getvalue())
    return {"seed": seed, "final_metrics": report.final_metrics.to_dict(),
            "naive_metrics": report.naive_metrics.to_dict()}


def cmd_train_synth(cfg: dict, seed: int, out: Path, seeds=None, jobs: int = 1) -> dict:
    _synth_config(cfg, seed)  # validate before any work
    return _fan_out(_train_synth_one, cfg, seed, out, seeds, jobs)


def _fan_out(fn, cfg, seed, out, seeds, jobs):
    if not seeds:
        return fn(cfg, seed, out, False)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(fn, [cfg] * len(seeds), seeds, [out] * len(seeds), [True] * len(seeds)))
    else:
        results = [fn(cfg, s, out, True) for s in seeds]
    return {"runs": results}


def cmd_eval(cfg: dict, seed: int, out: Path, **_) -> dict:
    data = _load_data(out, cfg)
    if cfg["eval.pairs"] < 10:
        raise cfgmod.ConfigError("eval.pairs must be >= 10")
    naive = evaluate(data, Reparam(np.eye(6)), seed, cfg["eval.pairs"])
    reparam = None
    if cfg["input.checkpoint"]:
        rep, _ = load_synth(ckpt_io.load(_input_path(out, cfg["input.checkpoint"])))
        reparam = evaluate(data, rep, seed, cfg["eval.pairs"])
    doc = {"config": cfg, "seed": seed, "naive": naive.to_dict(),
           "reparam": reparam.to_dict() if reparam else None}
    _write(out / "eval.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("label",) + MetricsReport.CSV_COLUMNS)
    w.writerow(["naive"] + naive.csv_row())
    if reparam:
        w.writerow(["reparam"] + reparam.csv_row())
    _write(out / "eval.csv", buf.getvalue())
    return {"naive": naive.to_dict(), "reparam": reparam.to_dict() if reparam else None}


def _diffusion_config(cfg: dict, seed: int) -> dif.DiffusionConfig:
    return dif.DiffusionConfig(
        T=cfg["diffusion.T"], lam=cfg["diffusion.lam"], lr=cfg["diffusion.lr"],
        disc_lr=cfg["diffusion.disc_lr"], batch_size=cfg["diffusion.batch_size"],
        iterations=cfg["diffusion.iterations"], ddim_steps=cfg["diffusion.ddim_steps"],
        hidden=cfg["diffusion.hidden"], mask_policy=cfg["diffusion.mask_policy"], seed=seed,
    )


def _train_diffusion_one(cfg: dict, seed: int, out: Path, multi: bool) -> dict:
    data = _load_data(out, cfg)
    dc = _diffusion_config(cfg, seed)
    state, curves = dif.train_diffusion(dc, data.observations)
    meta = {"seed": seed, "config": cfg, "train_seed": str(derive_seed(seed, "diffusion-train"))}
    ckpt_io.save(diffusion_checkpoint(state, meta), out / _suffix("diffusion.ckpt", seed, multi))
    _write(out / _suffix("diffusion_curves.csv", seed, multi), curves.to_csv())
    summary = {"seed": seed, "iterations": dc.iterations,
               "rec_ratio": dif.smoothed_rec_ratio(curves.l_rec) if len(curves.l_rec) >= 100 else None}
    _write(out / _suffix("diffusion_report.json", seed, multi),
           json.dumps({**summary, "config": cfg}, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_train_diffusion(cfg: dict, seed: int, out: Path, seeds=None, jobs: int = 1) -> dict:
    _diffusion_config(cfg, seed)
    return _fan_out(_train_diffusion_one, cfg, seed, out, seeds, jobs)


def _parse_mask(text: str, n: int, K: int, seed: int) -> np.ndarray:
    if text == "random":
        return sample_masks(stream(seed, "sample-masks"), n, K, "proper")
    bits = [int(b) for b in text.split(",") if b.strip()]
    if len(bits) != K or any(b not in (0, 1) for b in bits):
        raise cfgmod.ConfigError(f"sample.mask must be 'random' or {K} comma-separated bits")
    return np.tile(np.array(bits, dtype=np.int8), (n, 1))


def cmd_sample(cfg: dict, seed: int, out: Path, **_) -> dict:
    mode = cfg["sample.mode"]
    if mode not in dif.MODES:
        raise cfgmod.ConfigError(f"sample.mode must be one of {dif.MODES}")
    data = _load_data(out, cfg)
    state = load_diffusion(ckpt_io.load(_input_path(out, cfg["input.checkpoint"])))
    n, steps = cfg["sample.n"], cfg["sample.steps"]
    if n < 1 or not 1 <= steps <= state.sched.T:
        raise cfgmod.ConfigError("sample.n must be >= 1 and sample.steps in [1, T]")
    if not 0 <= cfg["sample.block"] < state.K:
        raise cfgmod.ConfigError("sample.block out of range")
    rng = stream(seed, "sample-sources")
    obs = data.observations
    ia, ib = rng.integers(0, len(obs), n), rng.integers(0, len(obs), n)
    xA, xB = obs[ia], obs[ib]
    mask = _parse_mask(cfg["sample.mask"], n, state.K, seed) if mode == "recombine" else None
    samples = dif.inference(state, mode, xA, xB if mode in ("recombine", "additive") else None,
                            k=cfg["sample.block"], mask=mask, steps=steps, seed=seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source_a", "source_b", "x0", "x1", "x2", "x3"])
    for a, b, row in zip(ia, ib, samples):
        w.writerow([int(a), int(b)] + [repr(float(v)) for v in row])
    _write(out / f"samples_{mode}.csv", buf.getvalue())
    summary = {"mode": mode, "n": n, "steps": steps, "seed": seed,
               "mahalanobis2": mahalanobis2(samples, fit_gaussian(obs))}
    if mode == "reconstruct":
        rms = np.sqrt(np.mean((samples - xA) ** 2, axis=1))
        summary["median_reconstruction_rms"] = float(np.median(rms))
    _write(out / f"samples_{mode}.json", json.dumps({**summary, "config": cfg}, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_sweep(cfg: dict, seed: int, out: Path, **_) -> dict:
    data = _load_data(out, cfg)
    dc = _diffusion_config(cfg, seed)
    rows = dif.lambda_sweep(data.observations, cfg["sweep.lams"], dc, seeds=cfg["sweep.seeds"],
                            n_eval=cfg["sweep.n_eval"])
    _write(out / "sweep.csv", dif.sweep_csv(rows))
    return {"rows": rows}


def _parse_pmf(text: str) -> np.ndarray:
    try:
        return np.array([[float(v) for v in row.split(",")] for row in text.split(";")])
    except ValueError as exc:
        raise cfgmod.ConfigError(f"theory.extra_pmf is not a numeric table: {exc}") from exc


def cmd_theory(cfg: dict, seed: int, out: Path, **_) -> dict:
    extra = []
    if cfg["theory.extra_pmf"]:
        try:
            extra.append(DiscreteJoint(_parse_pmf(cfg["theory.extra_pmf"])).pmf)
        except TheoryError as exc:
            raise cfgmod.ConfigError(f"theory.extra_pmf: {exc}") from exc
    man = run_theory_checks(seed, n_joints=cfg["theory.n_joints"], n_closure=cfg["theory.n_closure"],
                            n_poe=cfg["theory.n_poe"], n_coverage=cfg["theory.n_coverage"],
                            coverage_trials=cfg["theory.coverage_trials"], extra_joints=extra)
    _write(out / "theory_manifest.json", man.to_json())
    if not man.passed:
        failed = [k for k, v in man.checks.items() if not v["passed"]]
        raise ExitError(4, f"theory checks failed: {', '.join(failed)}")
    return {"passed": True, "checks": sorted(man.checks)}


def cmd_coverage(cfg: dict, seed: int, out: Path, **_) -> dict:
    fam = CoverageFamily(
        n_failure=cfg["coverage.n_failure"], n_success=cfg["coverage.n_success"],
        failure_mass0=cfg["coverage.failure_mass0"], failure_scale=cfg["coverage.failure_scale"],
        concentration_rate=cfg["coverage.concentration_rate"],
    )
    demo = inverted_u_demo(fam, cfg["coverage.lams"], cfg["coverage.n"], check=False)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["lam", "expected_coverage", "failure_mass"])
    for lam, cov in zip(demo["lam"], demo["coverage"]):
        q = fam(lam)
        w.writerow([repr(lam), repr(cov), repr(float(q[:fam.n_failure].sum()))])
    _write(out / "coverage.csv", buf.getvalue())
    return {"argmax": demo["argmax"], "interior_max": demo["interior_max"], "illustrative": True}


HANDLERS = {
    "gen-data": cmd_gen_data, "train-synth": cmd_train_synth, "eval": cmd_eval,
    "train-diffusion": cmd_train_diffusion, "sample": cmd_sample, "sweep": cmd_sweep,
    "theory": cmd_theory, "coverage": cmd_coverage,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recomblab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, default=0, help="global seed")
        p.add_argument("--out", default=".", help="output directory (must exist)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides")
        if name in ("train-synth", "train-diffusion"):
            p.add_argument("--seeds", help="comma-separated seeds; writes seed-suffixed outputs")
            p.add_argument("--jobs", type=int, default=1, help="parallel processes for --seeds")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        if not out.is_dir():
            raise ExitError(3, f"output directory does not exist: {out}")
        cfg = cfgmod.resolve(args.command, args.config, args.overrides)
        extra = {}
        if getattr(args, "seeds", None):
            try:
                extra["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
            except ValueError as exc:
                raise cfgmod.ConfigError(f"--seeds: {exc}") from exc
            extra["jobs"] = args.jobs
        result = HANDLERS[args.command](cfg, args.seed, out, **extra)
    except ExitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except CheckpointFormatError as exc:
        print(f"checkpoint format error: {exc}", file=sys.stderr)
        return 5
    except NumericsError as exc:  # includes IllConditioned
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 4
    except (cfgmod.ConfigError, TheoryError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


def main() -> None:
    sys.exit(run())
