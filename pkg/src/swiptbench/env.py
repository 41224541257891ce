"""Discrete-time simulator of a primary/secondary SWIPT sensor network.

One primary transmitter TX0 sends its own data and powers N secondary
transmitters by wireless energy transfer. Every slot is split into airtime
for data (alpha_0..alpha_N), airtime for harvesting (alpha'_1..alpha'_N) and
idle time. Secondaries spend battery energy to transmit.

All functions accept an optional leading batch shape so many independent
networks can be advanced with one numpy call. Per-node arrays keep the node
axis last: queues and communication gains have N+1 entries (index 0 is the
primary), batteries, harvesting gains and secondary powers have N.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import InfeasibleAction, NonFiniteAction, ValidationError

POWER_MODES = ("greedy", "learned")
_FEAS_TOL = 1e-12


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    return 10.0 * math.log10(mw)


def _per_node(name, value, count):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.repeat(arr, count)
    if arr.shape != (count,):
        raise ValidationError(name, f"expected 1 or {count} values, got {arr.size}")
    return tuple(float(x) for x in arr)


@dataclass(frozen=True)
class TaskConfig:
    """Parameters of one stationary network configuration (one task).

    Per-node fields accept a scalar, which is broadcast to every node.
    ``noise_N0`` is stored as linear power in mW; the text config carries dBm.
    """

    n_secondary: int = 2
    bandwidth_W: float = 5e6
    noise_N0: float = dbm_to_mw(-120.0)
    p0_max: float = 300.0
    pn_max: float = 300.0
    battery_cap_B: float = 100.0
    buffer_cap_rho: float = 1e9
    arrival_max_A: float = 1e5
    arrival_rate_lambda_a: float = 5.0
    comm_scale_zeta: tuple = 0.2
    eh_scale_zeta_prime: tuple = 0.1
    conv_eff_lambda: tuple = 0.2
    penalty_nu: float = 0.01
    slot_duration: float = 1.0
    horizon_T: int = 200
    noise_times_bandwidth: bool = False
    power_mode: str = "greedy"
    initial_battery: float = 50.0

    def __post_init__(self):
        n = self.n_secondary
        if int(n) != n or n < 1:
            raise ValidationError("n_secondary", f"must be an integer >= 1, got {n}")
        object.__setattr__(self, "n_secondary", int(n))
        object.__setattr__(self, "horizon_T", int(self.horizon_T))
        object.__setattr__(self, "comm_scale_zeta", _per_node("comm_scale_zeta", self.comm_scale_zeta, n + 1))
        object.__setattr__(
            self, "eh_scale_zeta_prime", _per_node("eh_scale_zeta_prime", self.eh_scale_zeta_prime, n)
        )
        object.__setattr__(self, "conv_eff_lambda", _per_node("conv_eff_lambda", self.conv_eff_lambda, n))
        for name in ("comm_scale_zeta", "eh_scale_zeta_prime"):
            if min(getattr(self, name)) <= 0:
                raise ValidationError(name, "Rayleigh scales must be > 0")
        lam = self.conv_eff_lambda
        if min(lam) <= 0 or max(lam) > 1:
            raise ValidationError("conv_eff_lambda", "efficiency must lie in (0, 1]")
        for name in ("bandwidth_W", "noise_N0", "p0_max", "pn_max", "battery_cap_B",
                     "buffer_cap_rho", "slot_duration"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValidationError(name, f"must be finite and > 0, got {v}")
        for name in ("arrival_max_A", "arrival_rate_lambda_a", "penalty_nu"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValidationError(name, f"must be finite and >= 0, got {v}")
        if self.horizon_T < 1:
            raise ValidationError("horizon_T", "must be >= 1")
        if self.power_mode not in POWER_MODES:
            raise ValidationError("power_mode", f"must be one of {POWER_MODES}")
        if not 0 <= self.initial_battery <= self.battery_cap_B:
            raise ValidationError("initial_battery", "must lie in [0, battery_cap_B]")

    @property
    def noise_power(self) -> float:
        """Noise term dividing the SNR (N0, or N0*W when requested)."""
        if self.noise_times_bandwidth:
            return self.noise_N0 * self.bandwidth_W
        return self.noise_N0

    @property
    def state_dim(self) -> int:
        return 4 * self.n_secondary + 2

    @property
    def action_dim(self) -> int:
        extra = self.n_secondary if self.power_mode == "learned" else 0
        return 2 * self.n_secondary + 2 + extra

    def with_nodes(self, n: int) -> "TaskConfig":
        """Same config with ``n`` secondaries; per-node values re-broadcast from node 1."""
        return replace(
            self,
            n_secondary=n,
            comm_scale_zeta=self.comm_scale_zeta[1] if len(self.comm_scale_zeta) > 1 else self.comm_scale_zeta[0],
            eh_scale_zeta_prime=self.eh_scale_zeta_prime[0],
            conv_eff_lambda=self.conv_eff_lambda[0],
        )

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class DomainConfig:
    domain_id: int
    n_secondary: int
    state_dim: int
    action_dim: int

    @property
    def policy_dim(self) -> int:
        return self.state_dim * self.action_dim

    @classmethod
    def from_task(cls, cfg: TaskConfig, domain_id: int) -> "DomainConfig":
        return cls(domain_id, cfg.n_secondary, cfg.state_dim, cfg.action_dim)


@dataclass
class SlotState:
    queues_q: np.ndarray
    batteries_b: np.ndarray
    comm_gain_h: np.ndarray
    eh_gain_h_prime: np.ndarray
    slot_index_t: int = 0


@dataclass
class ActionFeasible:
    p0: np.ndarray
    alpha_tx: np.ndarray
    alpha_eh: np.ndarray
    p_secondary: np.ndarray

    def energy(self) -> np.ndarray:
        """Per-node transmit energy p_n * alpha_n (node 0 first)."""
        p = np.concatenate([np.asarray(self.p0)[..., None], self.p_secondary], axis=-1)
        return p * self.alpha_tx


@dataclass
class StepOutcome:
    next_state: SlotState
    reward: np.ndarray
    served_bits_d: np.ndarray
    harvested_mJ: np.ndarray
    consumed_mJ: np.ndarray
    battery_overflow_mJ: np.ndarray
    arrivals_a: np.ndarray
    queue_penalty_bits: np.ndarray = field(default=None)

    @property
    def energy_mJ(self) -> np.ndarray:
        """Total energy spent on transmission in the slot (primary + secondaries)."""
        return self.consumed_mJ.sum(axis=-1)


def _shape(batch):
    if batch is None:
        return ()
    return (batch,) if isinstance(batch, int) else tuple(batch)


def sample_channels(cfg: TaskConfig, rng: np.random.Generator, batch=None):
    """Draw i.i.d. Rayleigh gains (communication, harvesting) with per-node scales."""
    shape = _shape(batch)
    h = rng.rayleigh(np.asarray(cfg.comm_scale_zeta), size=shape + (cfg.n_secondary + 1,))
    hp = rng.rayleigh(np.asarray(cfg.eh_scale_zeta_prime), size=shape + (cfg.n_secondary,))
    return h, hp


def sample_arrivals(cfg: TaskConfig, rng: np.random.Generator, batch=None):
    """Poisson arrivals in bits, mean lambda_a kbit per unit slot, clipped at A."""
    shape = _shape(batch) + (cfg.n_secondary + 1,)
    mean = cfg.arrival_rate_lambda_a * cfg.slot_duration * 1000.0
    a = rng.poisson(mean, size=shape).astype(float)
    return np.minimum(a, cfg.arrival_max_A)


def transmit_amount(p, h, alpha, cfg: TaskConfig):
    """Bits delivered in a slot: W log2(1 + p h / N0) alpha tau."""
    p, h, alpha = np.asarray(p, float), np.asarray(h, float), np.asarray(alpha, float)
    return cfg.bandwidth_W * np.log2(1.0 + p * h / cfg.noise_power) * alpha * cfg.slot_duration


def harvest_power(p0, h_prime, cfg: TaskConfig, node=None):
    """Power harvested by secondary ``node`` (1-based) from TX0's residual power.

    With ``node=None`` ``h_prime`` holds one gain per secondary (last axis).
    """
    residual = (cfg.p0_max - np.asarray(p0, float)) / cfg.n_secondary
    if node is None:
        lam = np.asarray(cfg.conv_eff_lambda)
        return lam * residual[..., None] * np.asarray(h_prime, float)
    return cfg.conv_eff_lambda[node - 1] * residual * np.asarray(h_prime, float)


def initial_state(cfg: TaskConfig, rng: np.random.Generator, batch=None) -> SlotState:
    """Empty queues, batteries at ``cfg.initial_battery``, fresh channels."""
    shape = _shape(batch)
    h, hp = sample_channels(cfg, rng, batch)
    return SlotState(
        queues_q=np.zeros(shape + (cfg.n_secondary + 1,)),
        batteries_b=np.full(shape + (cfg.n_secondary,), float(cfg.initial_battery)),
        comm_gain_h=h,
        eh_gain_h_prime=hp,
        slot_index_t=0,
    )


def _logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def greedy_secondary_power(alpha, batteries, cfg: TaskConfig):
    """p_n = min(P_max, b_n / alpha_n), zero when no airtime is allotted."""
    alpha = np.asarray(alpha, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(alpha > 0, np.minimum(cfg.pn_max, batteries / np.where(alpha > 0, alpha, 1.0)), 0.0)
    return p


def project_feasible(raw, state: SlotState, cfg: TaskConfig) -> ActionFeasible:
    """Squash an unconstrained action vector onto the feasible set.

    raw[0] drives p0 through a logistic; raw[1:2N+2] are logits of a softmax
    that also includes an idle slot with logit 0, so airtime sums to at most
    one. In ``learned`` power mode raw[2N+2:] set secondary powers through a
    logistic, still capped by the battery.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != cfg.action_dim:
        raise InfeasibleAction(f"raw action has {raw.shape[-1]} entries, expected {cfg.action_dim}")
    if not np.all(np.isfinite(raw)):
        raise NonFiniteAction("raw action contains NaN or inf")
    n = cfg.n_secondary
    p0 = cfg.p0_max * _logistic(raw[..., 0])
    logits = raw[..., 1:2 * n + 2]
    top = np.maximum(logits.max(axis=-1, keepdims=True), 0.0)
    w = np.exp(logits - top)
    frac = w / (np.exp(-top) + w.sum(axis=-1, keepdims=True))
    alpha_tx = frac[..., : n + 1]
    alpha_eh = frac[..., n + 1:]
    b = state.batteries_b
    if cfg.power_mode == "learned":
        want = cfg.pn_max * _logistic(raw[..., 2 * n + 2:])
        p_sec = np.minimum(want, greedy_secondary_power(alpha_tx[..., 1:], b, cfg))
    else:
        p_sec = greedy_secondary_power(alpha_tx[..., 1:], b, cfg)
    return ActionFeasible(p0=p0, alpha_tx=alpha_tx, alpha_eh=alpha_eh, p_secondary=p_sec)


def idle_action(cfg: TaskConfig, batch=None) -> ActionFeasible:
    shape = _shape(batch)
    n = cfg.n_secondary
    return ActionFeasible(
        p0=np.zeros(shape),
        alpha_tx=np.zeros(shape + (n + 1,)),
        alpha_eh=np.zeros(shape + (n,)),
        p_secondary=np.zeros(shape + (n,)),
    )


def check_feasible(state: SlotState, action: ActionFeasible, cfg: TaskConfig) -> None:
    """Raise InfeasibleAction unless every scheduling/power constraint holds."""
    a_tx, a_eh = np.asarray(action.alpha_tx), np.asarray(action.alpha_eh)
    p0, p_sec = np.asarray(action.p0), np.asarray(action.p_secondary)
    if a_tx.shape[-1] != cfg.n_secondary + 1 or a_eh.shape[-1] != cfg.n_secondary:
        raise InfeasibleAction("airtime vectors do not match the node count")
    tol = _FEAS_TOL
    for name, arr in (("alpha_tx", a_tx), ("alpha_eh", a_eh), ("p0", p0), ("p_secondary", p_sec)):
        if not np.all(np.isfinite(arr)):
            raise InfeasibleAction(f"{name} is not finite")
    if np.any(a_tx < -tol) or np.any(a_eh < -tol) or np.any(a_tx > 1 + tol) or np.any(a_eh > 1 + tol):
        raise InfeasibleAction("airtime fractions must lie in [0, 1]")
    if np.any(a_tx.sum(axis=-1) + a_eh.sum(axis=-1) > 1 + 1e-9):
        raise InfeasibleAction("total airtime exceeds the slot")
    if np.any(p0 < -tol) or np.any(p0 > cfg.p0_max * (1 + tol)):
        raise InfeasibleAction("p0 outside [0, P0]")
    if np.any(p_sec < -tol):
        raise InfeasibleAction("negative secondary power")
    used = p_sec * a_tx[..., 1:]
    b = state.batteries_b
    if np.any(used > b + tol * np.maximum(1.0, b)):
        raise InfeasibleAction("secondary energy exceeds battery")


def step(state: SlotState, action: ActionFeasible, cfg: TaskConfig, rng: np.random.Generator) -> StepOutcome:
    """Advance one slot: serve queues, update batteries, score, redraw channels."""
    check_feasible(state, action, cfg)
    batch = state.queues_q.shape[:-1]
    q, b = state.queues_q, state.batteries_b
    p0 = np.asarray(action.p0, float)
    a_tx, a_eh = action.alpha_tx, action.alpha_eh

    p_all = np.concatenate([p0[..., None], action.p_secondary], axis=-1)
    d = transmit_amount(p_all, state.comm_gain_h, a_tx, cfg)
    harvested = harvest_power(p0, state.eh_gain_h_prime, cfg) * a_eh
    consumed = p_all * a_tx
    # rounding in p = b/alpha may leave p*alpha one ulp above b
    consumed[..., 1:] = np.minimum(consumed[..., 1:], b)

    a = sample_arrivals(cfg, rng, batch)
    backlog = np.maximum(q - d, 0.0)
    q_next = np.minimum(cfg.buffer_cap_rho, backlog + a)

    b_pre = b - consumed[..., 1:] + harvested
    overflow = np.maximum(b_pre - cfg.battery_cap_B, 0.0)
    b_next = np.clip(b_pre, 0.0, cfg.battery_cap_B)

    reward = -consumed.sum(axis=-1) - cfg.penalty_nu * (overflow.sum(axis=-1) + backlog.sum(axis=-1))

    h, hp = sample_channels(cfg, rng, batch)
    nxt = SlotState(q_next, b_next, h, hp, state.slot_index_t + 1)
    return StepOutcome(
        next_state=nxt,
        reward=reward,
        served_bits_d=d,
        harvested_mJ=harvested,
        consumed_mJ=consumed,
        battery_overflow_mJ=overflow,
        arrivals_a=a,
        queue_penalty_bits=backlog,
    )


def state_vector(state: SlotState, cfg: TaskConfig) -> np.ndarray:
    """[q_0..q_N / rho, b_1..b_N / B, h_0..h_N, h'_1..h'_N]."""
    return np.concatenate(
        [
            state.queues_q / cfg.buffer_cap_rho,
            state.batteries_b / cfg.battery_cap_B,
            state.comm_gain_h,
            state.eh_gain_h_prime,
        ],
        axis=-1,
    )


class SwiptNetwork:
    """Stateful wrapper owning one random stream and a (possibly batched) state."""

    def __init__(self, cfg: TaskConfig, seed=None, batch=None, rng=None):
        self.cfg = cfg
        self.batch = batch
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.state = initial_state(cfg, self.rng, batch)

    def reset(self) -> np.ndarray:
        self.state = initial_state(self.cfg, self.rng, self.batch)
        return state_vector(self.state, self.cfg)

    def observe(self) -> np.ndarray:
        return state_vector(self.state, self.cfg)

    def step_raw(self, raw) -> StepOutcome:
        action = project_feasible(raw, self.state, self.cfg)
        return self.step(action)

    def step(self, action: ActionFeasible) -> StepOutcome:
        out = step(self.state, action, self.cfg, self.rng)
        self.state = out.next_state
        return out
