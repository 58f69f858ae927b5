"""Twin-experiment harness: truth, observations, replicated runs, statistics.

A twin experiment generates a truth trajectory from a random initial state,
synthesizes noisy observations of it, runs a filter against those
observations and scores the analysis against the known truth. Replicates are
independent work items with RNG streams derived deterministically from
(master seed, replicate index), so results do not depend on the execution
schedule.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .filters import (
    DenseUkfParams,
    EnkfParams,
    FilterState,
    ProgressiveParams,
    UkfParams,
    dense_ukf_cycle,
    enkf_cycle,
    progressive_ekf_cycle,
    sparse_ukf_cycle,
)
from .models import Lorenz96Model, ObservationOperator
from .sparse_core import FactorizationError, SparseSymMatrix, SparsityPattern

FILTER_NAMES = ("sparse_ukf", "progressive_ekf", "enkf", "dense_ukf")

WORKERS_ENV_VAR = "SPARSEKF_WORKERS"


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    """All run parameters of a twin experiment.

    Defaults are desk scale (finishes in minutes); ``paper_scale()`` switches
    to the long configuration (1000 replicates of 4000 steps).
    """

    n: int = 40
    forcing: float = 8.0
    dt: float = 0.025
    n_steps: int = 2000
    n_replicates: int = 100
    observed_every: int = 2
    r_scale: float = 1.0
    p0: float = 0.2
    filter: str = "sparse_ukf"
    nsp: int = 7
    n_p: int = 1
    delta: float = 1e-4
    n_ens: int = 10
    loc_radius: float = 9.0
    inflation: float = field(default=math.sqrt(1.08))
    q: float = 0.0
    kappa: float = 0.0
    master_seed: int = 0
    obs_interval: int = 1

    def validate(self):
        if self.n < 4:
            raise ConfigError(f"n must be >= 4, got {self.n}")
        if self.filter not in FILTER_NAMES:
            raise ConfigError(f"unknown filter {self.filter!r}; choose from {FILTER_NAMES}")
        if self.nsp % 2 == 0 or self.nsp < 1:
            raise ConfigError(f"nsp must be odd and positive, got {self.nsp}")
        if self.nsp > self.n:
            raise ConfigError(f"nsp must be <= n, got nsp={self.nsp} with n={self.n}")
        if self.n_steps < 1 or self.n_replicates < 1:
            raise ConfigError("n_steps and n_replicates must be positive")
        if self.observed_every < 1 or self.observed_every > self.n:
            raise ConfigError(f"observed_every must be in [1, n], got {self.observed_every}")
        if self.obs_interval < 1:
            raise ConfigError("obs_interval must be >= 1")
        if self.r_scale < 0 or self.p0 < 0 or self.q < 0:
            raise ConfigError("r_scale, p0 and q must be nonnegative")
        if self.n_p < 1:
            raise ConfigError("n_p must be >= 1")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.n_ens < 2:
            raise ConfigError("n_ens must be >= 2")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        return self

    def paper_scale(self):
        """The long configuration reported in the source experiments."""
        return replace(self, n_steps=4000, n_replicates=1000)

    @property
    def observed_indices(self):
        return np.arange(0, self.n, self.observed_every)

    @property
    def m(self):
        return self.observed_indices.size

    @property
    def half_bandwidth(self):
        return (self.nsp - 1) // 2

    def param_label(self):
        """Short parameter tag for report rows."""
        if self.filter == "enkf":
            return f"Nens={self.n_ens}"
        if self.filter == "progressive_ekf":
            return f"Nsp={self.nsp} np={self.n_p}"
        if self.filter == "sparse_ukf":
            return f"Nsp={self.nsp}"
        return "dense"


@dataclass
class ReplicateResult:
    replicate: int
    rmse: float
    eval_per_cycle: float
    gamma_activations: int
    jitter_activations: int
    failed: bool = False
    error: str | None = None


@dataclass
class SummaryStats:
    """Order statistics of a sample of RMSE values."""

    n: int
    median: float
    mean: float
    std: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float


@dataclass
class RunSummary:
    filter: str
    param: str
    results: list
    stats: SummaryStats | None
    n_failed: int
    eval_per_cycle: float
    gamma_activation_rate: float
    jitter_activation_rate: float


def summarize(values):
    """Median, mean, sample std, quartiles and 1.5*IQR whisker bounds."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("cannot summarize an empty list")
    q1, med, q3 = np.percentile(values, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return SummaryStats(
        n=values.size,
        median=float(med),
        mean=float(np.mean(values)),
        std=std,
        q1=float(q1),
        q3=float(q3),
        whisker_low=float(q1 - 1.5 * iqr),
        whisker_high=float(q3 + 1.5 * iqr),
    )


def rmse(analysis, truth):
    """Root-mean-square error over all state entries and all time steps."""
    analysis = np.asarray(analysis, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if analysis.shape != truth.shape:
        raise ValueError(f"trajectory shapes differ: {analysis.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((analysis - truth) ** 2)))


def _replicate_seed(config, replicate):
    return np.random.SeedSequence(config.master_seed, spawn_key=(replicate,))


def generate_truth(config, seed):
    """Truth trajectory: uniform[-1, 1]^n initial state advanced n_steps times."""
    rng = np.random.default_rng(seed)
    model = Lorenz96Model(config.n, config.forcing, config.dt)
    traj = np.empty((config.n_steps + 1, config.n))
    traj[0] = rng.uniform(-1.0, 1.0, config.n)
    for k in range(1, config.n_steps + 1):
        traj[k] = model.step(traj[k - 1])
    return traj


def observation_times(config):
    """Assimilation steps: every obs_interval-th step, starting at the first."""
    return np.arange(config.obs_interval, config.n_steps + 1, config.obs_interval)


def synthesize_observations(truth, config, seed):
    """Noisy observations of the truth at each assimilation time.

    Returns (times, y) where y[k] observes truth[times[k]] with additive
    Gaussian noise of covariance r_scale * I.
    """
    rng = np.random.default_rng(seed)
    obs_op = ObservationOperator(config.n, config.observed_indices)
    times = observation_times(config)
    y = obs_op.observe(truth[times])
    if config.r_scale > 0:
        y = y + math.sqrt(config.r_scale) * rng.standard_normal(y.shape)
    return times, y


def _build_filter(config, obs_op, xa0, rng_filter):
    """Initial filter state and a cycle(state, y_or_None) -> state closure.

    For the EnKF the "state" is a FilterState whose xa is the ensemble mean
    and whose Pa holds the member matrix.
    """
    R = config.r_scale * np.eye(config.m)
    n = config.n

    if config.filter == "sparse_ukf":
        pattern = SparsityPattern(n, config.half_bandwidth)
        Q = SparseSymMatrix.identity(pattern, config.q) if config.q > 0 else None
        params = UkfParams(pattern=pattern, R=R, kappa=config.kappa, Q=Q)
        state = FilterState(xa0, SparseSymMatrix.identity(pattern, config.p0))

        def cycle(state, y, model):
            return sparse_ukf_cycle(state, y, model, obs_op, params)

    elif config.filter == "progressive_ekf":
        pattern = SparsityPattern(n, config.half_bandwidth)
        Q = SparseSymMatrix.identity(pattern, config.q) if config.q > 0 else None
        params = ProgressiveParams(
            pattern=pattern, R=R, delta=config.delta, n_p=config.n_p, Q=Q
        )
        state = FilterState(xa0, SparseSymMatrix.identity(pattern, config.p0))

        def cycle(state, y, model):
            return progressive_ekf_cycle(state, y, model, obs_op, params)

    elif config.filter == "dense_ukf":
        Q = config.q * np.eye(n) if config.q > 0 else None
        params = DenseUkfParams(R=R, kappa=config.kappa, Q=Q)
        state = FilterState(xa0, config.p0 * np.eye(n))

        def cycle(state, y, model):
            return dense_ukf_cycle(state, y, model, obs_op, params)

    else:  # enkf
        params = EnkfParams(
            R=R,
            n_ens=config.n_ens,
            loc_radius=config.loc_radius,
            inflation=config.inflation,
        )
        members = xa0 + math.sqrt(config.p0) * rng_filter.standard_normal((config.n_ens, n))
        state = FilterState(members.mean(axis=0), members)

        def cycle(state, y, model):
            members = enkf_cycle(state.Pa, y, model, obs_op, params, rng_filter)
            return FilterState(members.mean(axis=0), members)

    return state, cycle


def run_replicate(config, replicate):
    """Run one replicate end to end; never raises on numerical failure."""
    seed = _replicate_seed(config, replicate)
    s_truth, s_obs, s_init, s_filter = seed.spawn(4)

    truth = generate_truth(config, s_truth)
    times, ys = synthesize_observations(truth, config, s_obs)
    y_at = dict(zip(times.tolist(), ys))

    rng_init = np.random.default_rng(s_init)
    xa0 = truth[0] + math.sqrt(config.p0) * rng_init.standard_normal(config.n)

    model = Lorenz96Model(config.n, config.forcing, config.dt)
    obs_op = ObservationOperator(config.n, config.observed_indices)
    state, cycle = _build_filter(config, obs_op, xa0, np.random.default_rng(s_filter))

    sq_sum = float(np.sum((state.xa - truth[0]) ** 2))
    gamma_hits = 0
    jitter_hits = 0
    try:
        for k in range(1, config.n_steps + 1):
            state = cycle(state, y_at.get(k), model)
            if not np.all(np.isfinite(state.xa)):
                raise FloatingPointError(f"non-finite analysis state at cycle {k}")
            sq_sum += float(np.sum((state.xa - truth[k]) ** 2))
            d = state.diagnostics
            if d is not None:
                gamma_hits += d.gamma > 0.0
                jitter_hits += d.cholesky_jitter > 0.0
    except (FactorizationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return ReplicateResult(
            replicate, float("nan"), float("nan"), gamma_hits, jitter_hits,
            failed=True, error=f"{type(exc).__name__}: {exc}",
        )

    run_rmse = math.sqrt(sq_sum / (config.n * (config.n_steps + 1)))
    eval_per_cycle = model.evaluation_count / config.n_steps
    return ReplicateResult(
        replicate, run_rmse, eval_per_cycle, gamma_hits, jitter_hits
    )


def _worker(args):
    config, replicate = args
    return run_replicate(config, replicate)


def default_workers():
    env = os.environ.get(WORKERS_ENV_VAR)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_experiment(config, workers=None):
    """Run all replicates of a configuration and aggregate their RMSE.

    Replicates run on a process pool (``workers=1`` forces serial execution;
    the default comes from the SPARSEKF_WORKERS environment variable or the
    available parallelism). Failed replicates are excluded from aggregates
    but counted in the summary.
    """
    config.validate()
    if workers is None:
        workers = default_workers()
    tasks = [(config, r) for r in range(config.n_replicates)]
    if workers <= 1 or config.n_replicates == 1:
        results = [run_replicate(config, r) for r in range(config.n_replicates)]
    else:
        import multiprocessing as mp

        ctx = mp.get_context("fork" if "fork" in mp.get_all_start_methods() else "spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            results = list(pool.map(_worker, tasks, chunksize=1))
    return aggregate_results(config, results)


def aggregate_results(config, results):
    """Deterministic reduction of per-replicate results into a RunSummary."""
    ok = [r for r in results if not r.failed]
    stats = summarize([r.rmse for r in ok]) if ok else None
    n_cycles = config.n_steps
    return RunSummary(
        filter=config.filter,
        param=config.param_label(),
        results=list(results),
        stats=stats,
        n_failed=len(results) - len(ok),
        eval_per_cycle=float(np.mean([r.eval_per_cycle for r in ok])) if ok else float("nan"),
        gamma_activation_rate=(
            float(np.mean([r.gamma_activations / n_cycles for r in ok])) if ok else float("nan")
        ),
        jitter_activation_rate=(
            float(np.mean([r.jitter_activations / n_cycles for r in ok])) if ok else float("nan")
        ),
    )


def _fmt(x):
    return f"{x:.6g}"


RUNS_CSV_HEADER = "filter,param,replicate,rmse,eval_per_cycle,gamma_activations"
SUMMARY_CSV_HEADER = "filter,param,median,mean,std,q1,q3,n_replicates,n_failed"


def write_runs_csv(summary, path):
    """Per-replicate CSV; failed replicates appear with rmse=nan."""
    with open(path, "w") as f:
        f.write(RUNS_CSV_HEADER + "\n")
        for r in summary.results:
            f.write(
                f"{summary.filter},{summary.param},{r.replicate},"
                f"{_fmt(r.rmse)},{_fmt(r.eval_per_cycle)},{r.gamma_activations}\n"
            )


def write_summary_csv(summaries, path):
    with open(path, "w") as f:
        f.write(SUMMARY_CSV_HEADER + "\n")
        for s in summaries:
            st = s.stats
            if st is None:
                nan = float("nan")
                row = [nan, nan, nan, nan, nan]
                n_ok = 0
            else:
                row = [st.median, st.mean, st.std, st.q1, st.q3]
                n_ok = st.n
            f.write(
                f"{s.filter},{s.param},"
                + ",".join(_fmt(v) for v in row)
                + f",{n_ok},{s.n_failed}\n"
            )


def config_field_names():
    return [f.name for f in fields(ExperimentConfig)]
