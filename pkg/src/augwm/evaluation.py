"""Evaluation protocols: dynamics grid sweeps, mid-episode switches, significance.

A trained policy is scored by rolling it out across a grid of mass/damping
multipliers, several seeds per cell, optionally adapting its context online.
Welch's unequal-variance t-test compares per-seed grid means between two
configurations.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adapter import AdaptConfig, adapt_rollout
from .core import Rng, ValidationError
from .envs import DEFAULT_HORIZON, DynamicsParams, EnvKind, SwitchingEnv, ToyEnv
from .model import EnsembleModel

DEFAULT_GRID = (0.5, 0.75, 1.0, 1.25, 1.5)


@dataclass
class EvalGridResult:
    """Per-cell, per-seed returns over a mass x damping grid.

    ``returns[i, j, k]`` is the mean return of seed ``seeds[k]`` at
    ``mass_grid[i]``, ``damping_grid[j]`` (averaged over that cell's
    evaluation rollouts).
    """

    mass_grid: tuple[float, ...]
    damping_grid: tuple[float, ...]
    seeds: tuple[int, ...]
    returns: np.ndarray

    def __post_init__(self):
        expect = (len(self.mass_grid), len(self.damping_grid), len(self.seeds))
        if self.returns.shape != expect:
            raise ValidationError(f"returns shape {self.returns.shape} != {expect}")

    @property
    def cell_means(self) -> np.ndarray:
        return self.returns.mean(axis=2)

    @property
    def cell_stds(self) -> np.ndarray:
        return self.returns.std(axis=2)


@dataclass(frozen=True)
class SwitchSpec:
    """Mid-episode dynamics change at step ``t_switch``."""

    t_switch: int
    params_before: DynamicsParams
    params_after: DynamicsParams


@dataclass
class GridSummary:
    overall_mean: float
    overall_std: float          # std over per-seed grid means
    per_seed_means: np.ndarray  # (n_seeds,)
    mass_marginals: np.ndarray
    damping_marginals: np.ndarray


def _cell_worker(args) -> tuple[int, int, np.ndarray]:
    """One grid cell across all seeds; top level so process pools can pickle it."""
    (ci, di, actor, model, kind, mass, damp, mode, rollouts, seeds, cfg,
     horizon, deterministic) = args
    params = DynamicsParams(mass_scale=mass, damping_scale=damp)
    out = np.zeros(len(seeds))
    for k, seed in enumerate(seeds):
        vals = []
        for r in range(rollouts):
            env = ToyEnv(kind, params, horizon)
            rng = Rng(seed).split(7_000_000 + (ci * 64 + di) * 1024 + r)
            ret, _ = adapt_rollout(actor, model, env, horizon, cfg, mode, rng,
                                   deterministic=deterministic)
            vals.append(ret)
        out[k] = float(np.mean(vals))
    return ci, di, out


def grid_eval(actor, model: EnsembleModel | None, kind: EnvKind,
              mass_grid=DEFAULT_GRID, damping_grid=DEFAULT_GRID,
              mode: str = "learned", rollouts_per_cell: int = 5,
              seeds=(0, 1, 2, 3, 4), cfg: AdaptConfig | None = None,
              horizon: int = DEFAULT_HORIZON, jobs: int = 1,
              deterministic: bool = True) -> EvalGridResult:
    """Score a policy over every (mass, damping) variant of an environment.

    Each rollout draws its random stream from (seed, cell, rollout index)
    alone, so results are identical no matter how many workers run.
    """
    if not mass_grid or not damping_grid or not seeds:
        raise ValidationError("grid and seeds must be non-empty")
    cfg = cfg or AdaptConfig()
    tasks = [(ci, di, actor, model, kind, m, d, mode, rollouts_per_cell,
              tuple(seeds), cfg, horizon, deterministic)
             for ci, m in enumerate(mass_grid)
             for di, d in enumerate(damping_grid)]
    returns = np.zeros((len(mass_grid), len(damping_grid), len(seeds)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell_worker, tasks))
    else:
        results = [_cell_worker(t) for t in tasks]
    for ci, di, vals in results:
        returns[ci, di] = vals
    return EvalGridResult(mass_grid=tuple(mass_grid),
                          damping_grid=tuple(damping_grid),
                          seeds=tuple(seeds), returns=returns)


def oracle_eval(actor, model: EnsembleModel, env, horizon: int, rng: Rng,
                cfg: AdaptConfig | None = None,
                deterministic: bool = True) -> float:
    """Episode return with the privileged observed-delta-ratio context."""
    ret, _ = adapt_rollout(actor, model, env, horizon, cfg or AdaptConfig(),
                           "oracle", rng, deterministic=deterministic)
    return ret


@dataclass
class SwitchTrace:
    t: np.ndarray
    reward: np.ndarray
    rolling_reward: np.ndarray  # trailing mean, window 25
    cumulative: np.ndarray
    context: np.ndarray
    oracle_ratio: np.ndarray
    total: float
    mode: str


def switch_eval(actor, model: EnsembleModel | None, spec: SwitchSpec,
                horizon: int, mode: str, cfg: AdaptConfig, rng: Rng,
                kind: EnvKind = EnvKind.MASS_SPRING_DAMPER,
                deterministic: bool = True, rolling_window: int = 25) -> SwitchTrace:
    """Single rollout whose dynamics change mid-episode."""
    if not (0 < spec.t_switch < horizon):
        raise ValidationError("t_switch must fall strictly inside the episode")
    env = SwitchingEnv(kind, spec.params_before, spec.params_after,
                       spec.t_switch, horizon)
    total, log = adapt_rollout(actor, model, env, horizon, cfg, mode, rng,
                               deterministic=deterministic)
    n = log.reward.size
    rolling = np.array([log.reward[max(0, i - rolling_window + 1):i + 1].mean()
                        for i in range(n)])
    return SwitchTrace(t=log.t, reward=log.reward, rolling_reward=rolling,
                       cumulative=np.cumsum(log.reward), context=log.context,
                       oracle_ratio=log.oracle_ratio, total=total, mode=mode)


# ---------------------------------------------------------------------------
# Welch's t-test
# ---------------------------------------------------------------------------

_BETACF_MAX_ITER = 300
_BETACF_EPS = 3e-16
_FPMIN = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz recurrence)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def _betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
             + a * math.log(x) + b * math.log(1.0 - x))
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def welch_ttest(sample_a, sample_b) -> tuple[float, float, float]:
    """Welch's unequal-variance two-sample t-test.

    Returns (t statistic, Welch-Satterthwaite degrees of freedom,
    two-sided p-value). The p-value is the Student-t survival mass
    P(|T| > |t|) = I_x(df/2, 1/2) at x = df / (df + t^2), evaluated with
    the continued-fraction incomplete beta above.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValidationError("each sample needs at least 2 observations")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        raise ValidationError("both samples are constant; t is undefined")
    sa, sb = va / a.size, vb / b.size
    se2 = sa + sb
    t = float((a.mean() - b.mean()) / math.sqrt(se2))
    df = float(se2 ** 2 / (sa ** 2 / (a.size - 1) + sb ** 2 / (b.size - 1)))
    p = _betainc(df / 2.0, 0.5, df / (df + t * t))
    return t, df, min(max(p, 0.0), 1.0)


def aggregate(r: EvalGridResult) -> GridSummary:
    """Grid summary: grand mean, seed-level spread, and marginal means.

    The reported std is the population std of per-seed overall means, so
    it reflects seed-to-seed variation rather than grid-cell variation.
    """
    per_seed = r.returns.mean(axis=(0, 1))
    cell_means = r.cell_means
    return GridSummary(
        overall_mean=float(cell_means.mean()),
        overall_std=float(per_seed.std()),
        per_seed_means=per_seed,
        mass_marginals=cell_means.mean(axis=1),
        damping_marginals=cell_means.mean(axis=0),
    )


# ---------------------------------------------------------------------------
# CSV row helpers (writers live in the CLI)
# ---------------------------------------------------------------------------


def grid_csv_rows(r: EvalGridResult) -> list[list]:
    rows = []
    for ci, m in enumerate(r.mass_grid):
        for di, d in enumerate(r.damping_grid):
            for k, seed in enumerate(r.seeds):
                rows.append([m, d, seed, float(r.returns[ci, di, k])])
    return rows


def switch_csv_rows(tr: SwitchTrace) -> list[list]:
    rows = []
    for i in range(tr.t.size):
        rows.append([int(tr.t[i]), float(tr.reward[i]), float(tr.rolling_reward[i]),
                     float(tr.cumulative[i]), *map(float, tr.context[i]), tr.mode])
    return rows
