"""Experiment orchestration: task sequences, controllers, metrics and sweeps."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .env import DomainConfig, SwiptNetwork, TaskConfig
from .errors import EmptySeries, ValidationError
from .lifelong import LifelongAgent, LifelongConfig
from .lyapunov import LyapunovConfig, solve_slot
from .pg import CriticParams, LinearGaussianPolicy, PGConfig, train_iteration

CONTROLLERS = ("lyapunov", "pgrl", "cdl2rl")
METRICS = ("avg_reward", "energy", "queue_cdf", "harvested_cumulative", "convergence_iters")
CONVERGED_FRACTION = 0.25

# Dynamic parameter grid of the two benchmark domains: per task
# (eh_scale_zeta_prime, conv_eff_lambda, comm_scale_zeta, arrival_rate_lambda_a).
TABLE_II = {
    1: {"n_secondary": 2, "tasks": [(0.1, 0.2, 0.2, 5), (0.2, 0.3, 0.3, 10), (0.3, 0.6, 0.1, 15), (0.4, 0.8, 0.5, 20)]},
    2: {"n_secondary": 4, "tasks": [(0.2, 0.3, 0.4, 12), (0.5, 0.7, 0.9, 25), (0.8, 0.9, 0.2, 5), (0.9, 0.2, 0.4, 10)]},
}
CONV_EFF_GRID = (0.2, 0.4, 0.6, 0.8, 1.0)
NODE_GRID = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class EHDynamicityLevel:
    label: str
    eh_scale: float
    efficiency: float


EH_LEVELS = {
    "high": EHDynamicityLevel("high", 1.8, 0.65),
    "medium": EHDynamicityLevel("medium", 1.0, 0.45),
    "low": EHDynamicityLevel("low", 0.6, 0.35),
}


@dataclass
class DomainSpec:
    domain: DomainConfig
    tasks: list  # [(task label, TaskConfig)]

    @property
    def label(self) -> str:
        return f"D{self.domain.domain_id}"


@dataclass
class ExperimentSpec:
    name: str
    domain_sequence: list
    controllers: tuple = CONTROLLERS
    seeds: tuple = (0,)
    iterations: int = 50
    metrics: tuple = ("avg_reward", "energy", "convergence_iters")
    pg: PGConfig = field(default_factory=PGConfig)
    lyapunov: LyapunovConfig = field(default_factory=LyapunovConfig)
    lifelong: LifelongConfig = field(default_factory=LifelongConfig)
    eval_episodes: int = 2

    def __post_init__(self):
        if not self.domain_sequence or not any(ds.tasks for ds in self.domain_sequence):
            raise ValidationError("domain_sequence", "at least one domain with one task is required")
        if not self.seeds:
            raise ValidationError("seeds", "at least one seed is required")
        bad = [c for c in self.controllers if c not in CONTROLLERS]
        if bad or not self.controllers:
            raise ValidationError("controllers", f"must be a non-empty subset of {CONTROLLERS}, got {list(self.controllers)}")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise ValidationError("metrics", f"unknown metrics {bad}; allowed {METRICS}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValidationError("iterations", "must be an integer >= 1")
        if int(self.eval_episodes) != self.eval_episodes or self.eval_episodes < 1:
            raise ValidationError("eval_episodes", "must be an integer >= 1")
        for ds in self.domain_sequence:
            for label, cfg in ds.tasks:
                if DomainConfig.from_task(cfg, ds.domain.domain_id) != ds.domain:
                    raise ValidationError("domain_sequence", f"task {label} does not match domain {ds.label} dimensions")

    def task_list(self):
        """[(domain label, domain id, task label, TaskConfig)] in execution order."""
        return [(ds.label, ds.domain.domain_id, label, cfg) for ds in self.domain_sequence for label, cfg in ds.tasks]


@dataclass(frozen=True)
class MetricsRow:
    controller: str
    domain: str
    task: str
    seed: int
    iteration: int
    avg_reward: float
    avg_energy_mJ_per_slot: float
    avg_queue_bits: float
    harvested_cumulative_mJ: float

    @classmethod
    def header(cls):
        return [f.name for f in fields(cls)]

    def values(self):
        return [getattr(self, f.name) for f in fields(self)]


def table2_task(domain_id: int, index: int, base: TaskConfig | None = None) -> TaskConfig:
    base = base or TaskConfig()
    row = TABLE_II[domain_id]
    zp, lam, zeta, la = row["tasks"][index]
    return replace(base, n_secondary=row["n_secondary"], eh_scale_zeta_prime=zp, conv_eff_lambda=lam,
                   comm_scale_zeta=zeta, arrival_rate_lambda_a=la)


def table2_sequence(base: TaskConfig | None = None, domains=(1, 2)) -> list:
    seq = []
    for k in domains:
        tasks = [(f"T{i + 1}", table2_task(k, i, base)) for i in range(len(TABLE_II[k]["tasks"]))]
        seq.append(DomainSpec(DomainConfig.from_task(tasks[0][1], k), tasks))
    return seq


def _seed_rng(seed, controller, *extra):
    return np.random.default_rng([int(seed), CONTROLLERS.index(controller), *extra])


def _lyapunov_eval(cfg: TaskConfig, lcfg: LyapunovConfig, episodes: int, rng):
    """Run the per-slot controller for ``episodes`` x horizon_T slots."""
    R, E, Q, H = [], [], [], []
    for _ in range(episodes):
        net = SwiptNetwork(cfg, rng=rng)
        harvested = 0.0
        for _t in range(cfg.horizon_T):
            out = net.step(solve_slot(net.state, cfg, lcfg))
            R.append(float(out.reward))
            E.append(float(out.energy_mJ))
            Q.append(float(out.next_state.queues_q.mean()))
            harvested += float(out.harvested_mJ.sum())
        H.append(harvested)
    return {
        "avg_reward": float(np.mean(R)),
        "avg_energy_mJ_per_slot": float(np.mean(E)),
        "avg_queue_bits": float(np.mean(Q)),
        "harvested_mJ": float(np.mean(H)),
        "queue_samples": np.asarray(Q),
    }


def run_sequential(spec: ExperimentSpec, controller: str, seed: int, extras: dict | None = None) -> list:
    """Run every task of ``spec`` in order with one controller and seed.

    CD-L2RL carries its knowledge state across tasks, PG-RL starts fresh on
    every task and the Lyapunov controller evaluates one phase per task. If
    ``extras`` is a dict it receives per-task diagnostics (queue samples,
    warm-start flags, lifelong losses and the agent itself).
    """
    if controller not in CONTROLLERS:
        raise ValidationError("controller", f"unknown controller {controller!r}")
    rows: list = []
    cumulative = 0.0
    agent = LifelongAgent(spec.lifelong, seed=int(seed)) if controller == "cdl2rl" else None
    if extras is not None:
        extras.setdefault("queue_samples", {})
        extras.setdefault("warm", {})
        extras.setdefault("loss", {})

    def emit(dlabel, tlabel, it, m):
        nonlocal cumulative
        cumulative += m["harvested_mJ"]
        rows.append(MetricsRow(controller, dlabel, tlabel, int(seed), it, m["avg_reward"],
                               m["avg_energy_mJ_per_slot"], m["avg_queue_bits"], cumulative))

    for t_index, (dlabel, dom_id, tlabel, cfg) in enumerate(spec.task_list()):
        rng = _seed_rng(seed, controller, t_index) if controller != "cdl2rl" else None
        key = f"{dlabel}{tlabel}"
        if controller == "lyapunov":
            m = _lyapunov_eval(cfg, spec.lyapunov, spec.eval_episodes, rng)
            emit(dlabel, tlabel, 1, m)
            if extras is not None:
                extras["queue_samples"][key] = m["queue_samples"]
        elif controller == "pgrl":
            pol = LinearGaussianPolicy.zeros(cfg.state_dim, cfg.action_dim, spec.pg.sigma_init, dom_id)
            critic = CriticParams.zeros(cfg.state_dim)
            last_q = None
            for it in range(1, spec.iterations + 1):
                pol, critic, m = train_iteration(pol, critic, cfg, spec.pg, rng)
                emit(dlabel, tlabel, it, m)
                last_q = m["queue_samples"]
            if extras is not None:
                extras["queue_samples"][key] = last_q.ravel()
        else:
            # one stream for the whole lifelong run: later tasks may depend on earlier ones
            if t_index == 0:
                agent_rng = _seed_rng(seed, controller)
            res = agent.observe_task(cfg, dom_id, spec.pg, agent_rng)
            for it, m in enumerate(res.iterations, start=1):
                emit(dlabel, tlabel, it, m)
            if extras is not None:
                extras["warm"][key] = res.warm
                extras["loss"][key] = (res.loss_before, res.loss_after)
                extras["agent"] = agent
    return rows


def _run_job(args):
    spec, controller, seed = args
    return run_sequential(spec, controller, seed)


def run_all(spec: ExperimentSpec, controllers=None, jobs: int = 1) -> list:
    """Every (controller, seed) run of ``spec``, concatenated in a fixed order."""
    controllers = tuple(controllers or spec.controllers)
    work = [(spec, c, s) for c in controllers for s in spec.seeds]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_job, work))
    else:
        parts = [_run_job(w) for w in work]
    return [row for part in parts for row in part]


def convergence_iterations(reward_series, fraction: float = 0.95, window: int = 5) -> int:
    """First (1-based) iteration whose trailing window mean reaches ``fraction`` of the best.

    Rewards are shifted by the series minimum first; the first ``window - 1``
    iterations use the partial window available so far.
    """
    r = np.asarray(reward_series, dtype=float)
    if r.size == 0:
        raise EmptySeries("reward series is empty")
    if window < 1:
        raise ValidationError("window", "must be >= 1")
    r = r - r.min()
    csum = np.concatenate([[0.0], np.cumsum(r)])
    idx = np.arange(1, r.size + 1)
    lo = np.maximum(idx - window, 0)
    means = (csum[idx] - csum[lo]) / (idx - lo)
    target = fraction * means.max()
    # tolerate round-off in the running sums
    hits = np.nonzero(means >= target - 1e-12 * max(1.0, abs(target)))[0]
    return int(hits[0]) + 1


def queue_cdf(samples, thresholds=None):
    """Empirical CDF of queue lengths as [(threshold, P[Q <= threshold])]."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise EmptySeries("no queue samples")
    if thresholds is None:
        thresholds = np.linspace(0.0, x[-1], 100)
    thresholds = np.asarray(thresholds, dtype=float)
    probs = np.searchsorted(x, thresholds, side="right") / x.size
    return [(float(t), float(p)) for t, p in zip(thresholds, probs)]


def converged_phase_mean(values) -> float:
    """Mean over the final 25% of iterations (at least one)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise EmptySeries("empty series")
    k = max(1, int(math.ceil(CONVERGED_FRACTION * v.size)))
    return float(v[-k:].mean())


def task_series(rows, controller=None, seed=None):
    """{(domain, task): [rows in iteration order]}, preserving execution order."""
    out: dict = {}
    for r in rows:
        if controller is not None and r.controller != controller:
            continue
        if seed is not None and r.seed != seed:
            continue
        out.setdefault((r.domain, r.task), []).append(r)
    return out


def converged_energy(rows) -> float:
    """Mean over tasks of each task's converged-phase energy per slot."""
    series = task_series(rows)
    if not series:
        raise EmptySeries("no rows")
    return float(np.mean([converged_phase_mean([r.avg_energy_mJ_per_slot for r in rs]) for rs in series.values()]))


SWEEP_PARAMETERS = ("conv_eff", "n_nodes", "eh_dynamicity")


def sweep_points(parameter: str):
    if parameter == "conv_eff":
        return list(CONV_EFF_GRID)
    if parameter == "n_nodes":
        return list(NODE_GRID)
    if parameter == "eh_dynamicity":
        return list(EH_LEVELS)
    raise ValidationError("parameter", f"must be one of {SWEEP_PARAMETERS}")


def apply_sweep_point(spec: ExperimentSpec, parameter: str, point) -> ExperimentSpec:
    """Copy of ``spec`` with every task modified for one sweep point."""
    if parameter == "conv_eff":
        change = lambda c: replace(c, conv_eff_lambda=float(point))  # noqa: E731
    elif parameter == "n_nodes":
        change = lambda c: c.with_nodes(int(point))  # noqa: E731
    elif parameter == "eh_dynamicity":
        level = EH_LEVELS[point] if isinstance(point, str) else point
        change = lambda c: replace(c, eh_scale_zeta_prime=level.eh_scale, conv_eff_lambda=level.efficiency)  # noqa: E731
    else:
        raise ValidationError("parameter", f"must be one of {SWEEP_PARAMETERS}")
    seq = []
    for ds in spec.domain_sequence:
        tasks = [(label, change(cfg)) for label, cfg in ds.tasks]
        seq.append(DomainSpec(DomainConfig.from_task(tasks[0][1], ds.domain.domain_id), tasks))
    return replace(spec, domain_sequence=seq)


def sweep(parameter: str, base_spec: ExperimentSpec, controllers=None, seeds=None, points=None, jobs: int = 1):
    """Converged-phase energy per (controller, sweep point, seed).

    Returns a list of dicts with keys controller, parameter, point, seed,
    avg_energy_mJ_per_slot, state_dim and harvested_cumulative_mJ (the
    cumulative harvested-energy series of the run).
    """
    controllers = tuple(controllers or base_spec.controllers)
    seeds = tuple(seeds if seeds is not None else base_spec.seeds)
    points = list(points if points is not None else sweep_points(parameter))
    table = []
    for point in points:
        spec = replace(apply_sweep_point(base_spec, parameter, point), seeds=seeds)
        rows = run_all(spec, controllers, jobs)
        for c in controllers:
            for s in seeds:
                mine = [r for r in rows if r.controller == c and r.seed == s]
                table.append({
                    "controller": c,
                    "parameter": parameter,
                    "point": point,
                    "seed": s,
                    "avg_energy_mJ_per_slot": converged_energy(mine),
                    "state_dim": spec.domain_sequence[0].domain.state_dim,
                    "harvested_cumulative_mJ": [r.harvested_cumulative_mJ for r in mine],
                })
    return table


def _get(row, key):
    return row[key] if isinstance(row, dict) else getattr(row, key)


def aggregate(rows, keys, value: str = "avg_reward"):
    """Median, mean and interquartile range of ``value`` per group, sorted by group key."""
    rows = list(rows)
    if not rows:
        raise EmptySeries("no rows to aggregate")
    keys = (keys,) if isinstance(keys, str) else tuple(keys)
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(_get(r, k) for k in keys), []).append(float(_get(r, value)))
    out = []
    for g in sorted(groups, key=lambda t: tuple((str(type(x)), x) for x in t)):
        v = np.asarray(groups[g])
        q25, q75 = np.percentile(v, [25, 75])
        out.append({**dict(zip(keys, g)), "median": float(np.median(v)), "mean": float(v.mean()),
                    "iqr": float(q75 - q25), "count": int(v.size)})
    return out
