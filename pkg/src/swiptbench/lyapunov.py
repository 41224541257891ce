"""Per-slot drift-plus-penalty control by alternating minimization.

Each slot, the queue-drift bound plus an energy penalty is minimized over
(p0, alpha_0, alpha_1..N, alpha'_1..N) with blocks updated in the order
alpha_n -> alpha_0 -> (p0, alpha'_n). Secondary powers follow the greedy
battery rule of the simulator. Every scalar is searched on a coarse grid and
then refined by golden-section search inside the best grid cell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import ActionFeasible, SlotState, TaskConfig, check_feasible, greedy_secondary_power, transmit_amount
from .errors import ValidationError

OBJECTIVE_MODES = ("standard", "paper")
_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class LyapunovConfig:
    beta: float = 1.0
    rho_hat: float = 1e9
    eps_a: float = 1e-6
    max_alt_passes: int = 50
    objective_mode: str = "standard"
    sub_grid: int = 33
    golden_tol: float = 1e-6

    def __post_init__(self):
        if self.beta < 0:
            raise ValidationError("beta", "must be >= 0")
        if self.eps_a <= 0:
            raise ValidationError("eps_a", "must be > 0")
        if int(self.max_alt_passes) != self.max_alt_passes or self.max_alt_passes < 1:
            raise ValidationError("max_alt_passes", "must be an integer >= 1")
        if self.objective_mode not in OBJECTIVE_MODES:
            raise ValidationError("objective_mode", f"must be one of {OBJECTIVE_MODES}")
        if self.sub_grid < 3:
            raise ValidationError("sub_grid", "must be >= 3")
        object.__setattr__(self, "max_alt_passes", int(self.max_alt_passes))
        object.__setattr__(self, "sub_grid", int(self.sub_grid))


def lyapunov_value(theta, n_secondary: int) -> float:
    """Quadratic congestion measure (1/N) sum_n q_n^2 over all N+1 queues."""
    theta = np.asarray(theta, dtype=float)
    return float(np.dot(theta, theta) / n_secondary)


def _combine(d, energy, q, lcfg: LyapunovConfig):
    if lcfg.objective_mode == "standard":
        return d * d - 2.0 * q * d + lcfg.beta * energy
    return (1.0 - 2.0 * lcfg.rho_hat) * d * d - lcfg.beta * energy


def per_slot_objective(state: SlotState, action: ActionFeasible, cfg: TaskConfig, lcfg: LyapunovConfig) -> float:
    """Variable-dependent part of the drift-plus-penalty bound for one slot.

    ``standard``: sum_n d_n^2 - 2 q_n d_n + beta p_n alpha_n.
    ``paper``:    sum_n (1 - 2 rho_hat) d_n^2 - beta p_n alpha_n.
    """
    check_feasible(state, action, cfg)
    p = np.concatenate([np.atleast_1d(action.p0), action.p_secondary])
    d = transmit_amount(p, state.comm_gain_h, action.alpha_tx, cfg)
    energy = p * action.alpha_tx
    return float(np.sum(_combine(d, energy, state.queues_q, lcfg)))


def drift_penalty_bound(state: SlotState, action: ActionFeasible, cfg: TaskConfig, lcfg: LyapunovConfig) -> float:
    """Right-hand side of the drift-plus-penalty bound (constants included)."""
    p = np.concatenate([np.atleast_1d(action.p0), action.p_secondary])
    d = transmit_amount(p, state.comm_gain_h, action.alpha_tx, cfg)
    energy = p * action.alpha_tx
    A, rho = cfg.arrival_max_A, lcfg.rho_hat
    return float(np.sum((1.0 - 2.0 * rho) * d * d + A * A + 2.0 * rho * A - lcfg.beta * energy))


class _SlotProblem:
    """Per-node objective terms of one slot, as scalar and vectorized callables."""

    def __init__(self, state: SlotState, cfg: TaskConfig, lcfg: LyapunovConfig):
        self.cfg, self.lcfg = cfg, lcfg
        self.q = [float(x) for x in state.queues_q]
        self.h = [float(x) for x in state.comm_gain_h]
        self.b = [float(x) for x in state.batteries_b]
        self.rate_scale = cfg.bandwidth_W * cfg.slot_duration
        self.noise = cfg.noise_power
        self.standard = lcfg.objective_mode == "standard"
        self.beta = lcfg.beta
        self.quad = 1.0 - 2.0 * lcfg.rho_hat

    def _mix(self, d, e, q):
        if self.standard:
            return d * d - 2.0 * q * d + self.beta * e
        return self.quad * d * d - self.beta * e

    # node 0: variables p0 and alpha_0
    def primary(self, p0, a0):
        d = self.rate_scale * math.log2(1.0 + p0 * self.h[0] / self.noise) * a0
        return self._mix(d, p0 * a0, self.q[0])

    def primary_vec(self, p0, a0):
        d = self.rate_scale * np.log2(1.0 + p0 * self.h[0] / self.noise) * a0
        return self._mix(d, p0 * a0, self.q[0])

    # node n >= 1: variable alpha_n, power by the greedy rule
    def secondary(self, n, a):
        if a <= 0.0:
            return 0.0
        p = min(self.cfg.pn_max, self.b[n - 1] / a)
        d = self.rate_scale * math.log2(1.0 + p * self.h[n] / self.noise) * a
        return self._mix(d, p * a, self.q[n])

    def secondary_vec(self, n, a):
        p = greedy_secondary_power(a, self.b[n - 1], self.cfg)
        d = self.rate_scale * np.log2(1.0 + p * self.h[n] / self.noise) * a
        return self._mix(d, p * a, self.q[n])


def _golden(f, lo, hi, tol):
    a, b = lo, hi
    c = b - _INV_GOLDEN * (b - a)
    d = a + _INV_GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def minimize_scalar(f, f_vec, lo, hi, current, grid, tol):
    """Grid search then golden refinement on [lo, hi]; never returns worse than ``current``.

    Grid ties resolve to the smallest value (lowest energy for every variable
    searched here).
    """
    f_cur = f(current)
    if hi <= lo:
        x = lo
        fx = f(x)
        return (x, fx) if fx < f_cur else (current, f_cur)
    xs = np.linspace(lo, hi, grid)
    vals = f_vec(xs)
    i = int(np.argmin(vals))
    best_x, best_f = float(xs[i]), float(vals[i])
    left, right = xs[max(i - 1, 0)], xs[min(i + 1, grid - 1)]
    gx, gf = _golden(f, float(left), float(right), tol * (hi - lo))
    if gf < best_f:
        best_x, best_f = gx, gf
    if best_f < f_cur:
        return best_x, best_f
    return current, f_cur


def _airtime_grid():
    return np.unique(np.concatenate([[0.0], np.geomspace(1e-7, 1.0, 57), np.linspace(0.0, 1.0, 41)]))


_ALPHA_GRID = _airtime_grid()
_DP_STEPS = 100


def _grid_start(prob: "_SlotProblem", cfg: TaskConfig):
    """Airtime split from per-node grid costs and a sweep over a budget multiplier.

    The primary cost at each airtime is minimized over a p0 grid. Each
    multiplier gives every node its penalized best airtime; the best split
    that fits in the slot wins, alongside single-node candidates.
    """
    n = cfg.n_secondary
    alphas = _ALPHA_GRID
    p0s = np.unique(np.concatenate([np.linspace(0.0, cfg.p0_max, 41), cfg.p0_max * np.geomspace(1e-6, 1.0, 30)]))
    prim = prob.primary_vec(p0s[:, None], alphas[None, :])
    best_p = np.argmin(prim, axis=0)
    costs = np.empty((n + 1, alphas.size))
    costs[0] = prim[best_p, np.arange(alphas.size)]
    for k in range(1, n + 1):
        costs[k] = prob.secondary_vec(k, alphas)
    scale = float(np.abs(costs).max()) + 1.0
    lams = np.concatenate([[0.0], np.geomspace(1e-12 * scale, 1e3 * scale, 80)])
    idx = np.argmin(costs[None] + lams[:, None, None] * alphas[None, None, :], axis=2)
    # single-node candidates: one node at its best airtime, the rest idle
    single = np.zeros((n + 1, n + 1), dtype=int)
    single[np.arange(n + 1), np.arange(n + 1)] = np.argmin(costs, axis=1)
    idx = np.concatenate([idx, single, np.zeros((1, n + 1), dtype=int)])
    total = costs[np.arange(n + 1)[None, :], idx].sum(axis=1)
    total[alphas[idx].sum(axis=1) > 1.0] = np.inf
    pick = idx[int(np.argmin(total))]
    a = alphas[pick]
    best = float(total.min())

    # exact split on a uniform airtime lattice by min-plus dynamic programming
    steps = _DP_STEPS
    u = np.arange(steps + 1) / steps
    prim_u = prob.primary_vec(p0s[:, None], u[None, :])
    bp_u = np.argmin(prim_u, axis=0)
    cu = np.empty((n + 1, steps + 1))
    cu[0] = prim_u[bp_u, np.arange(steps + 1)]
    for k in range(1, n + 1):
        cu[k] = prob.secondary_vec(k, u)
    j = np.arange(steps + 1)
    diff = j[:, None] - j[None, :]  # budget used so far minus this node's share
    F = cu[0].copy()
    choices = []
    for k in range(1, n + 1):
        cand = np.where(diff >= 0, F[np.clip(diff, 0, steps)] + cu[k][None, :], np.inf)
        arg = np.argmin(cand, axis=1)
        choices.append(arg)
        F = cand[j, arg]
    end = int(np.argmin(F))
    if F[end] < best:
        share = []
        for arg in reversed(choices):
            share.append(int(arg[end]))
            end -= share[-1]
        share.append(end)
        a = u[np.array(share[::-1])]
        p0 = float(p0s[bp_u[share[-1]]]) if a[0] > 0 else float(cfg.p0_max)
        return p0, float(a[0]), [float(x) for x in a[1:]]
    p0 = float(p0s[best_p[pick[0]]]) if a[0] > 0 else float(cfg.p0_max)
    return p0, float(a[0]), [float(x) for x in a[1:]]


def solve_slot(state: SlotState, cfg: TaskConfig, lcfg: LyapunovConfig, rng=None,
               init: ActionFeasible | None = None, info: dict | None = None,
               fill_harvest: bool = True) -> ActionFeasible:
    """Alternating minimization of the per-slot objective.

    If ``info`` is a dict it receives ``trace`` (objective at the start and
    after every block update) and ``passes``. Harvesting airtime does not
    enter the objective; once the passes converge, unused airtime is split
    evenly over harvesting, which leaves the objective unchanged and keeps
    batteries charged. ``rng`` is accepted for interface symmetry; the solver
    is deterministic.
    """
    trace = [] if info is not None else None
    n = cfg.n_secondary
    prob = _SlotProblem(state, cfg, lcfg)
    if init is None:
        # blockwise updates stall on the shared airtime budget, so start from a grid split
        p0, a0, a_sec = _grid_start(prob, cfg)
        a_eh = [0.0] * n
    else:
        p0 = float(init.p0)
        a0 = float(init.alpha_tx[0])
        a_sec = [float(x) for x in init.alpha_tx[1:]]
        a_eh = [float(x) for x in init.alpha_eh]

    terms_sec = [prob.secondary(k + 1, a_sec[k]) for k in range(n)]
    term_p = prob.primary(p0, a0)
    obj = term_p + sum(terms_sec)
    if trace is not None:
        trace.append(obj)

    grid, tol = lcfg.sub_grid, lcfg.golden_tol
    passes = 0
    for passes in range(1, lcfg.max_alt_passes + 1):
        start = obj
        # (b) secondary airtimes with p0, alpha', alpha_0 fixed
        for k in range(n):
            budget = 1.0 - a0 - sum(a_eh) - (sum(a_sec) - a_sec[k])
            budget = max(budget, 0.0)
            node = k + 1
            x, fx = minimize_scalar(
                lambda a: prob.secondary(node, a),
                lambda a: prob.secondary_vec(node, a),
                0.0, budget, min(a_sec[k], budget), grid, tol,
            )
            a_sec[k], terms_sec[k] = x, fx
        obj = term_p + sum(terms_sec)
        if trace is not None:
            trace.append(obj)
        # (c) primary airtime
        budget = max(1.0 - sum(a_sec) - sum(a_eh), 0.0)
        a0, term_p = minimize_scalar(
            lambda a: prob.primary(p0, a), lambda a: prob.primary_vec(p0, a),
            0.0, budget, min(a0, budget), grid, tol,
        )
        obj = term_p + sum(terms_sec)
        if trace is not None:
            trace.append(obj)
        # (d) primary power; alpha' does not appear in the objective
        p0, term_p = minimize_scalar(
            lambda p: prob.primary(p, a0), lambda p: prob.primary_vec(p, a0),
            0.0, cfg.p0_max, p0, grid, tol,
        )
        obj = term_p + sum(terms_sec)
        if trace is not None:
            trace.append(obj)
        if start - obj < lcfg.eps_a * max(1.0, abs(start)):
            break

    if a0 == 0.0:
        # primary silent: p0 is objective-neutral, zero leaves all power for harvesting
        p0 = 0.0
    if fill_harvest:
        spare = 1.0 - a0 - sum(a_sec) - sum(a_eh)
        if spare > 0:
            a_eh = [x + spare / n for x in a_eh]
            # keep the simplex sum <= 1 despite rounding
            excess = a0 + sum(a_sec) + sum(a_eh) - 1.0
            if excess > 0:
                a_eh = [max(x - excess / n, 0.0) for x in a_eh]

    a_tx = np.array([a0] + a_sec)
    p_sec = greedy_secondary_power(a_tx[1:], state.batteries_b, cfg)
    if info is not None:
        info["trace"] = trace
        info["passes"] = passes
    return ActionFeasible(p0=np.float64(p0), alpha_tx=a_tx, alpha_eh=np.array(a_eh), p_secondary=p_sec)


class LyapunovController:
    """Stateless per-slot controller; ``act`` solves one slot problem."""

    def __init__(self, cfg: TaskConfig, lcfg: LyapunovConfig | None = None):
        self.cfg = cfg
        self.lcfg = lcfg or LyapunovConfig()

    def act(self, state: SlotState) -> ActionFeasible:
        return solve_slot(state, self.cfg, self.lcfg)
