"""Actor-critic policy gradient over a linear-Gaussian policy.

The policy mean is a linear map of the state vector, mu = Theta s, with
Theta of shape (A_d, S_d) stored column-major in ``theta`` so that
``theta[j * A_d + i] == Theta[i, j]``. The covariance is diagonal with a
learned log standard deviation per action dimension. The critic is linear in
the state with a bias.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .env import SwiptNetwork, TaskConfig, state_vector
from .errors import DimensionMismatch, SingularFisher, ValidationError
from .numerics import psd_project

SIGMA_MIN = 1e-3
LOG_SIGMA_MIN = math.log(SIGMA_MIN)
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PGConfig:
    actor_lr: float = 0.05
    critic_lr: float = 1e-2
    gamma: float = 0.99
    batch_size: int = 10
    horizon: int = 200
    iterations: int = 50
    nat_grad_eta: float = 0.1
    fisher_ridge: float = 1e-4
    sigma_init: float = 0.5
    grad_clip: float = 10.0

    def __post_init__(self):
        if self.actor_lr < 0 or self.critic_lr < 0:
            raise ValidationError("actor_lr", "learning rates must be >= 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError("gamma", "must lie in [0, 1]")
        for name in ("batch_size", "horizon", "iterations"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValidationError(name, "must be an integer >= 1")
            object.__setattr__(self, name, int(v))
        if self.nat_grad_eta < 0:
            raise ValidationError("nat_grad_eta", "must be >= 0")
        if self.fisher_ridge < 0:
            raise ValidationError("fisher_ridge", "must be >= 0")
        if self.sigma_init < SIGMA_MIN:
            raise ValidationError("sigma_init", f"must be >= {SIGMA_MIN}")
        if self.grad_clip <= 0:
            raise ValidationError("grad_clip", "must be > 0")


@dataclass
class LinearGaussianPolicy:
    theta: np.ndarray
    log_std: np.ndarray
    state_dim: int
    action_dim: int
    domain_id: int = 0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).copy()
        self.log_std = np.asarray(self.log_std, dtype=float).copy()
        if self.theta.shape != (self.state_dim * self.action_dim,):
            raise DimensionMismatch(f"theta has shape {self.theta.shape}, expected ({self.state_dim * self.action_dim},)")
        if self.log_std.shape != (self.action_dim,):
            raise DimensionMismatch(f"log_std has shape {self.log_std.shape}, expected ({self.action_dim},)")
        self.log_std = np.maximum(self.log_std, LOG_SIGMA_MIN)

    @classmethod
    def zeros(cls, state_dim, action_dim, sigma_init=0.5, domain_id=0):
        return cls(np.zeros(state_dim * action_dim), np.full(action_dim, math.log(sigma_init)),
                   state_dim, action_dim, domain_id)

    @property
    def mean_matrix(self) -> np.ndarray:
        """Theta as an (A_d, S_d) matrix."""
        return self.theta.reshape(self.state_dim, self.action_dim).T

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def mean(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if s.shape[-1] != self.state_dim:
            raise DimensionMismatch(f"state has {s.shape[-1]} entries, expected {self.state_dim}")
        return s @ self.mean_matrix.T

    def copy(self) -> "LinearGaussianPolicy":
        return replace(self)


@dataclass
class CriticParams:
    w: np.ndarray

    @classmethod
    def zeros(cls, state_dim):
        return cls(np.zeros(state_dim + 1))

    def value(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if s.shape[-1] + 1 != self.w.size:
            raise DimensionMismatch(f"state has {s.shape[-1]} entries, critic expects {self.w.size - 1}")
        return s @ self.w[:-1] + self.w[-1]


def log_prob(policy: LinearGaussianPolicy, s, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != policy.action_dim:
        raise DimensionMismatch(f"action has {u.shape[-1]} entries, expected {policy.action_dim}")
    z = (u - policy.mean(s)) / policy.std
    return -0.5 * np.sum(z * z, axis=-1) - policy.log_std.sum() - 0.5 * policy.action_dim * _LOG_2PI


def sample_action(policy: LinearGaussianPolicy, s, rng: np.random.Generator):
    """Draw u ~ N(Theta s, diag(sigma^2)); returns (u, log-density at u)."""
    mu = policy.mean(s)
    u = mu + policy.std * rng.standard_normal(mu.shape)
    return u, log_prob(policy, s, u)


def returns(rewards, gamma: float) -> np.ndarray:
    """Discounted returns G_t along the last axis."""
    r = np.asarray(rewards, dtype=float)
    g = np.empty_like(r)
    acc = np.zeros(r.shape[:-1])
    for t in range(r.shape[-1] - 1, -1, -1):
        acc = r[..., t] + gamma * acc
        g[..., t] = acc
    return g


def td_advantage(critic: CriticParams, s_t, s_next, r_t, gamma: float):
    return r_t + gamma * critic.value(s_next) - critic.value(s_t)


def _score_parts(policy: LinearGaussianPolicy, s, u):
    s = np.asarray(s, dtype=float)
    u = np.asarray(u, dtype=float)
    if s.shape[-1] != policy.state_dim or u.shape[-1] != policy.action_dim:
        raise DimensionMismatch("state/action dimensions do not match the policy")
    var = np.exp(2.0 * policy.log_std)
    diff = u - policy.mean(s)
    g_mean = diff / var
    g_log_std = diff * diff / var - 1.0
    return s, g_mean, g_log_std


def log_prob_grad(policy: LinearGaussianPolicy, s, u) -> np.ndarray:
    """Gradient of log pi(u|s) w.r.t. (theta, log_std), concatenated.

    The theta block is s kron Sigma^{-1}(u - Theta s) in the column-major layout.
    """
    s, g_mean, g_ls = _score_parts(policy, s, u)
    g_theta = np.multiply.outer(s, g_mean).reshape(-1)
    return np.concatenate([g_theta, g_ls])


@dataclass
class Rollout:
    states: np.ndarray      # (B, T+1, S)
    actions: np.ndarray     # (B, T, A)
    rewards: np.ndarray     # (B, T)
    energy: np.ndarray      # (B, T) total transmit energy per slot
    queue: np.ndarray       # (B, T) mean queue length after the slot
    harvested: np.ndarray   # (B, T) total harvested energy per slot


def rollout(policy: LinearGaussianPolicy, cfg: TaskConfig, rng: np.random.Generator,
            batch: int, horizon: int) -> Rollout:
    """Simulate ``batch`` independent episodes in lockstep."""
    if policy.state_dim != cfg.state_dim or policy.action_dim != cfg.action_dim:
        raise DimensionMismatch("policy dimensions do not match the task")
    net = SwiptNetwork(cfg, batch=batch, rng=rng)
    S = np.empty((batch, horizon + 1, cfg.state_dim))
    U = np.empty((batch, horizon, cfg.action_dim))
    R = np.empty((batch, horizon))
    E = np.empty((batch, horizon))
    Q = np.empty((batch, horizon))
    H = np.empty((batch, horizon))
    M = policy.mean_matrix.T
    std = policy.std
    s = state_vector(net.state, cfg)
    for t in range(horizon):
        S[:, t] = s
        u = s @ M + std * rng.standard_normal((batch, cfg.action_dim))
        U[:, t] = u
        out = net.step_raw(u)
        R[:, t] = out.reward
        E[:, t] = out.energy_mJ
        Q[:, t] = out.next_state.queues_q.mean(axis=-1)
        H[:, t] = out.harvested_mJ.sum(axis=-1)
        s = state_vector(out.next_state, cfg)
    S[:, horizon] = s
    return Rollout(S, U, R, E, Q, H)


def _metrics(ro: Rollout) -> dict:
    return {
        "avg_reward": float(ro.rewards.mean()),
        "avg_energy_mJ_per_slot": float(ro.energy.mean()),
        "avg_queue_bits": float(ro.queue.mean()),
        "harvested_mJ": float(ro.harvested.sum(axis=1).mean()),
    }


def _clip(g, max_norm):
    norm = float(np.linalg.norm(g))
    if norm > max_norm:
        g = g * (max_norm / norm)
    return g


def critic_update(critic: CriticParams, states, targets, lr: float) -> CriticParams:
    """One gradient step on the mean squared error between V(s) and ``targets``."""
    states = np.asarray(states, dtype=float)
    feats = np.concatenate([states, np.ones(states.shape[:-1] + (1,))], axis=-1)
    err = critic.value(states) - np.asarray(targets, dtype=float)
    grad_w = 2.0 * np.tensordot(err, feats, axes=err.ndim) / err.size
    return CriticParams(critic.w - lr * grad_w)


def surrogate_hessian(states, traj_reward, log_std, floor: float = 1e-6) -> np.ndarray:
    """Reward-weighted curvature of the log-likelihood in theta.

    ``states`` is (B, T, S) and ``traj_reward`` (B,); rewards are shifted by
    their minimum so the weights are non-negative.
    """
    states = np.asarray(states, dtype=float)
    shifted = np.asarray(traj_reward, dtype=float)
    shifted = shifted - shifted.min()
    ss = np.einsum("b,btj,btl->jl", shifted, states, states) / states.shape[0]
    aleph = np.kron(ss, np.diag(np.exp(-2.0 * np.asarray(log_std, dtype=float))))
    return psd_project(0.5 * (aleph + aleph.T), floor=floor)


def train_iteration(policy: LinearGaussianPolicy, critic: CriticParams, env: TaskConfig,
                    cfg: PGConfig, rng: np.random.Generator):
    """One actor-critic update from a fresh batch of trajectories.

    Returns new (policy, critic) objects and a metrics dict; inputs are not mutated.
    """
    ro = rollout(policy, env, rng, cfg.batch_size, cfg.horizon)
    s_t, s_next = ro.states[:, :-1], ro.states[:, 1:]
    G = returns(ro.rewards, cfg.gamma)
    adv = td_advantage(critic, s_t, s_next, ro.rewards, cfg.gamma)

    s, g_mean, g_ls = _score_parts(policy, s_t, ro.actions)
    b = cfg.batch_size
    grad_theta = np.einsum("btj,bti,bt->ji", s, g_mean, adv).reshape(-1) / b
    grad_ls = np.einsum("bti,bt->i", g_ls, adv) / b
    grad = _clip(np.concatenate([grad_theta, grad_ls]), cfg.grad_clip)

    k = policy.theta.size
    new_policy = replace(policy, theta=policy.theta + cfg.actor_lr * grad[:k],
                         log_std=policy.log_std + cfg.actor_lr * grad[k:])

    new_critic = critic_update(critic, s_t, G, cfg.critic_lr)

    metrics = _metrics(ro)
    metrics["queue_samples"] = ro.queue
    return new_policy, new_critic, metrics


def estimate_surrogate(policy: LinearGaussianPolicy, env: TaskConfig, cfg: PGConfig,
                       rng: np.random.Generator, floor: float = 1e-6):
    """Second-order surrogate (rho, aleph) of the expected return around the policy.

    rho is a natural-gradient step from theta; aleph is the reward-weighted
    negative Hessian of the trajectory log-likelihood (mean block only), with
    trajectory rewards shifted by the batch minimum and projected onto the
    PSD cone.
    """
    ro = rollout(policy, env, rng, cfg.batch_size, cfg.horizon)
    s, g_mean, _ = _score_parts(policy, ro.states[:, :-1], ro.actions)
    B, T = ro.rewards.shape
    k = policy.theta.size
    scores = np.einsum("btj,bti->btji", s, g_mean).reshape(B, T, k)

    traj_reward = ro.rewards.mean(axis=1)
    centered = traj_reward - traj_reward.mean()
    g_hat = np.einsum("b,btk->k", centered, scores) / (B * T)
    flat = scores.reshape(B * T, k)
    fisher = flat.T @ flat / (B * T) + cfg.fisher_ridge * np.eye(k)
    try:
        step = np.linalg.solve(fisher, g_hat)
    except np.linalg.LinAlgError as exc:
        raise SingularFisher("Fisher matrix is singular") from exc
    if not np.all(np.isfinite(step)):
        raise SingularFisher("Fisher solve produced non-finite values")
    rho = policy.theta + cfg.nat_grad_eta * step

    return rho, surrogate_hessian(s, traj_reward, policy.log_std, floor)
