"""Shared fixtures. Expensive training runs are computed once per session."""
import numpy as np
import pytest

from recomblab.synthdata import make_dataset

ACCEPT_SEEDS = (0, 1, 2)
DIFFUSION_LAMS = (0.0, 0.003, 0.1)
DIFFUSION_DATA_SEED = 100


@pytest.fixture(scope="session")
def big_dataset():
    return make_dataset(0, 100_000)


@pytest.fixture(scope="session")
def small_dataset():
    return make_dataset(7, 2000)


@pytest.fixture(scope="session")
def synth_runs():
    """Default synthetic training for each acceptance seed, plus a repeat of seed 0."""
    from recomblab.synthtrain import SynthTrainConfig, train_synthetic

    runs = {}
    for seed in ACCEPT_SEEDS:
        data = make_dataset(seed, 20000)
        runs[seed] = train_synthetic(SynthTrainConfig(seed=seed), data)
    repeat = train_synthetic(SynthTrainConfig(seed=0), make_dataset(0, 20000))
    return {"runs": runs, "repeat": repeat}


@pytest.fixture(scope="session")
def diffusion_runs():
    """Toy diffusion at T=200 and 5000 steps for every (lambda, seed) pair."""
    import time

    from recomblab.diffusion import (
        DiffusionConfig,
        evaluate_recombination,
        reconstruction_rms,
        smoothed_rec_ratio,
        train_diffusion,
    )

    obs = make_dataset(DIFFUSION_DATA_SEED, 20000).observations
    out = {}
    for seed in ACCEPT_SEEDS:
        for lam in DIFFUSION_LAMS:
            t0 = time.perf_counter()
            state, curves = train_diffusion(DiffusionConfig(T=200, lam=lam, iterations=5000, seed=seed), obs)
            elapsed = time.perf_counter() - t0
            ev = evaluate_recombination(state, obs, 2000, 50, seed)
            rms = reconstruction_rms(state, obs[:500], 50, seed)
            out[(lam, seed)] = {
                "state": state,
                "curves": curves,
                "ratio": smoothed_rec_ratio(curves.l_rec),
                "mahalanobis2": ev["mahalanobis2"],
                "frechet": ev["frechet"],
                "median_rms": float(np.median(rms)),
                "seconds": elapsed,
            }
    return out


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def report_line():
    """Record one acceptance verdict; all verdicts are printed in the terminal summary."""
    def record(criterion: str, passed: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
