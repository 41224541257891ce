"""Cross-domain lifelong policy learning with a shared latent base.

Every task policy is factored as theta = Psi U v: ``U`` (d x r) is a latent
base shared by all domains, ``Psi`` (K_d x d) maps it into one domain's
policy space, and ``v`` (r) is a sparse per-task code. After a task has been
trained, its policy is summarized by a second-order surrogate (rho, aleph);
the code is fitted by weighted LASSO and Psi and U are refit in closed form.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .env import DomainConfig, TaskConfig
from .errors import DimensionMismatch, SingularSystem, ValidationError
from .numerics import ridge_solve, weighted_lasso
from .pg import CriticParams, LinearGaussianPolicy, PGConfig, estimate_surrogate, rollout, train_iteration

FORMAT_NAME = "swiptbench-knowledge"
FORMAT_VERSION = 1
PSI_INITS = ("orthonormal", "identity")


@dataclass(frozen=True)
class LifelongConfig:
    r: int = 5
    d: int = 10
    mu1: float = 0.1
    mu2: float = 1e-4
    mu3: float = 1e-4
    eta_a_mode: str = "running_mean"
    eta_a_value: float = 0.5
    pg_warm_iterations: int = 20
    pg_base_iterations: int = 30
    burst_iterations: int = 10
    polish_iterations: int = 20
    probe_trajectories: int = 2
    psi_init: str = "orthonormal"
    monotone_guard: bool = True

    def __post_init__(self):
        for name in ("r", "d"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValidationError(name, "must be an integer >= 1")
        if self.r > self.d:
            raise ValidationError("r", "must not exceed d")
        for name in ("mu1", "mu2", "mu3"):
            if getattr(self, name) < 0:
                raise ValidationError(name, "must be >= 0")
        if self.eta_a_mode not in ("running_mean", "fixed"):
            raise ValidationError("eta_a_mode", "must be 'running_mean' or 'fixed'")
        if not 0.0 < self.eta_a_value <= 1.0:
            raise ValidationError("eta_a_value", "must lie in (0, 1]")
        if int(self.probe_trajectories) != self.probe_trajectories or self.probe_trajectories < 1:
            raise ValidationError("probe_trajectories", "must be an integer >= 1")
        for name in ("pg_warm_iterations", "pg_base_iterations", "burst_iterations", "polish_iterations"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValidationError(name, "must be an integer >= 0")
        if self.pg_base_iterations < 1:
            raise ValidationError("pg_base_iterations", "must be >= 1")
        if self.psi_init not in PSI_INITS:
            raise ValidationError("psi_init", f"must be one of {PSI_INITS}")


@dataclass
class KnowledgeBase:
    U: np.ndarray

    @property
    def latent_dim_d(self) -> int:
        return self.U.shape[0]

    @property
    def num_components_r(self) -> int:
        return self.U.shape[1]

    @classmethod
    def initial(cls, d: int, r: int, rng: np.random.Generator) -> "KnowledgeBase":
        return cls(rng.uniform(-0.5, 0.5, size=(d, r)) / math.sqrt(d))


@dataclass
class DomainProjection:
    psi: np.ndarray
    stat_X: np.ndarray
    stat_Y: np.ndarray
    tasks_seen: int = 0
    domain_id: int = 0

    @classmethod
    def initial(cls, policy_dim: int, d: int, domain_id: int = 0, mode: str = "identity",
                rng: np.random.Generator | None = None) -> "DomainProjection":
        """New projection: [I_d; 0], or a random matrix with orthonormal columns."""
        if policy_dim < d:
            raise DimensionMismatch(f"policy dimension {policy_dim} is smaller than d={d}")
        if mode == "identity":
            psi = np.zeros((policy_dim, d))
            psi[:d, :d] = np.eye(d)
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            psi, _ = np.linalg.qr(rng.standard_normal((policy_dim, d)))
        return cls(psi, np.zeros((d, d)), np.zeros((policy_dim, d)), 0, domain_id)


@dataclass
class TaskRecord:
    task_id: int
    domain_id: int
    rho: np.ndarray
    aleph: np.ndarray
    code_v: np.ndarray
    task_config: TaskConfig | None = None


def reconstruct_policy(kb: KnowledgeBase, proj: DomainProjection, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (kb.num_components_r,) or proj.psi.shape[1] != kb.latent_dim_d:
        raise DimensionMismatch(f"psi {proj.psi.shape}, U {kb.U.shape}, v {v.shape}")
    return proj.psi @ (kb.U @ v)


def sparse_code(rho, aleph, kb: KnowledgeBase, proj: DomainProjection, mu1: float, tol: float = 1e-8):
    """argmin_v ||rho - Psi U v||^2_aleph + mu1 ||v||_1."""
    return weighted_lasso(rho, proj.psi @ kb.U, aleph, mu1, tol=tol)


def task_statistics(kb: KnowledgeBase, record: TaskRecord):
    """(X, Y) = ((Uv)(Uv)^T, rho (Uv)^T)."""
    z = kb.U @ record.code_v
    return np.outer(z, z), np.outer(record.rho, z)


def update_stats(proj: DomainProjection, record: TaskRecord, eta_a: float, kb: KnowledgeBase) -> DomainProjection:
    """Blend the task's statistics into the domain's running statistics."""
    if not 0.0 < eta_a <= 1.0:
        raise ValidationError("eta_a", "must lie in (0, 1]")
    X, Y = task_statistics(kb, record)
    if X.shape != proj.stat_X.shape or Y.shape != proj.stat_Y.shape:
        raise DimensionMismatch(f"task statistics {X.shape}/{Y.shape} vs domain {proj.stat_X.shape}/{proj.stat_Y.shape}")
    return replace(
        proj,
        stat_X=(1.0 - eta_a) * proj.stat_X + eta_a * X,
        stat_Y=(1.0 - eta_a) * proj.stat_Y + eta_a * Y,
        tasks_seen=proj.tasks_seen + 1,
    )


def update_projection(proj: DomainProjection, mu2: float) -> DomainProjection:
    """Psi minimizing ||Y - Psi X||_F^2 + mu2 ||Psi||_F^2."""
    return replace(proj, psi=ridge_solve(proj.stat_X, proj.stat_Y, mu2))


def update_shared_base(kb: KnowledgeBase, records, projections: dict, mu3: float) -> KnowledgeBase:
    """U minimizing sum_j ||rho_j - Psi_k U v_j||^2 + mu3 ||U||_F^2 over the records.

    Uses vec(Psi U v) = (v^T kron Psi) vec(U) with column-major vec.
    """
    records = list(records)
    if not records:
        raise ValidationError("records", "at least one task record is required")
    d, r = kb.U.shape
    A = np.zeros((d * r, d * r))
    rhs = np.zeros((d, r))
    for rec in records:
        psi = projections[rec.domain_id].psi
        v = rec.code_v
        A += np.kron(np.outer(v, v), psi.T @ psi)
        rhs += np.outer(psi.T @ rec.rho, v)
    b = rhs.reshape(-1, order="F")
    if mu3 > 0:
        A += mu3 * np.eye(d * r)
        u = np.linalg.solve(A, b)
    else:
        if not np.any(A):
            raise SingularSystem("normal equations are identically zero")
        u = np.linalg.lstsq(A, b, rcond=None)[0]
    return KnowledgeBase(u.reshape(d, r, order="F"))


def lifelong_loss(kb: KnowledgeBase, projections: dict, records, mu1: float, mu2: float, mu3: float) -> float:
    """Surrogate lifelong objective over stored records.

    sum_k (1/|C_k|) sum_{j in C_k} [0.5 ||rho_j - Psi_k U v_j||^2_aleph_j + mu1 ||v_j||_1]
    + mu2 sum_k ||Psi_k||_F^2 + mu3 ||U||_F^2
    """
    by_domain: dict = {}
    for rec in records:
        by_domain.setdefault(rec.domain_id, []).append(rec)
    total = 0.0
    for k, recs in by_domain.items():
        psi_u = projections[k].psi @ kb.U
        part = 0.0
        for rec in recs:
            res = rec.rho - psi_u @ rec.code_v
            part += 0.5 * float(res @ rec.aleph @ res) + mu1 * float(np.abs(rec.code_v).sum())
        total += part / len(recs)
    total += mu2 * sum(float(np.sum(p.psi ** 2)) for p in projections.values())
    total += mu3 * float(np.sum(kb.U ** 2))
    return total


@dataclass
class TaskResult:
    record: TaskRecord
    policy: LinearGaussianPolicy
    iterations: list
    warm: bool
    loss_before: float
    loss_after: float
    guard_steps: int
    probe_rewards: list = field(default_factory=list)


@dataclass
class LifelongAgent:
    """Sequential owner of the knowledge base, domain projections and task records."""

    config: LifelongConfig = field(default_factory=LifelongConfig)
    seed: int = 0
    kb: KnowledgeBase | None = None
    projections: dict = field(default_factory=dict)
    domains: dict = field(default_factory=dict)
    records: list = field(default_factory=list)

    def __post_init__(self):
        if self.kb is None:
            rng = np.random.default_rng(self.seed)
            self.kb = KnowledgeBase.initial(self.config.d, self.config.r, rng)

    # --- domain bookkeeping -------------------------------------------------
    def register_domain(self, domain: DomainConfig) -> DomainProjection:
        k = domain.domain_id
        if k in self.domains:
            if self.domains[k] != domain:
                raise DimensionMismatch(f"domain {k} already registered with {self.domains[k]}")
            return self.projections[k]
        rng = np.random.default_rng([self.seed, 7919, int(k)])
        self.domains[k] = domain
        self.projections[k] = DomainProjection.initial(domain.policy_dim, self.config.d, k, self.config.psi_init, rng)
        return self.projections[k]

    def domain_records(self, k) -> list:
        return [r for r in self.records if r.domain_id == k]

    def eta_a(self, k) -> float:
        if self.config.eta_a_mode == "fixed":
            return self.config.eta_a_value
        return 1.0 / (self.projections[k].tasks_seen + 1)

    def loss(self) -> float:
        c = self.config
        return lifelong_loss(self.kb, self.projections, self.records, c.mu1, c.mu2, c.mu3)

    # --- one task -----------------------------------------------------------
    def observe_task(self, task_cfg: TaskConfig, domain_id, pg_cfg: PGConfig, rng: np.random.Generator,
                     on_iteration=None) -> TaskResult:
        """Train on one task, fold its surrogate into the knowledge state, return the result.

        ``on_iteration(index, metrics)`` is called after every PG iteration.
        """
        c = self.config
        domain = DomainConfig.from_task(task_cfg, domain_id)
        proj = self.register_domain(domain)
        prior = self.domain_records(domain_id)
        warm = bool(prior)
        history: list = []

        policy = LinearGaussianPolicy.zeros(domain.state_dim, domain.action_dim, pg_cfg.sigma_init, domain_id)
        critic = CriticParams.zeros(domain.state_dim)

        def train(n, phase):
            nonlocal policy, critic
            for _ in range(n):
                policy, critic, m = train_iteration(policy, critic, task_cfg, pg_cfg, rng)
                m = {k: v for k, v in m.items() if k != "queue_samples"} | {"phase": phase}
                history.append(m)
                if on_iteration is not None:
                    on_iteration(len(history), m)

        selection = []
        if warm:
            theta0, selection = self._select_start(prior, proj, policy, task_cfg, pg_cfg, rng)
            policy = replace(policy, theta=theta0)
            train(c.burst_iterations, "burst")
            rho0, aleph0 = estimate_surrogate(policy, task_cfg, pg_cfg, rng)
            v0 = sparse_code(rho0, aleph0, self.kb, proj, c.mu1)
            theta_v0 = reconstruct_policy(self.kb, proj, v0)
            # keep the burst policy when its reconstruction probes worse
            if self._probe(policy, theta_v0, task_cfg, pg_cfg, rng) >= self._probe(policy, policy.theta, task_cfg, pg_cfg, rng):
                policy = replace(policy, theta=theta_v0)
            train(c.pg_warm_iterations, "warm")
        else:
            train(c.pg_base_iterations, "base")

        rho, aleph = estimate_surrogate(policy, task_cfg, pg_cfg, rng)
        v = sparse_code(rho, aleph, self.kb, proj, c.mu1)
        record = TaskRecord(len(self.records), domain_id, rho, aleph, v, task_cfg)
        self.records.append(record)

        loss_before = self.loss()
        old_psi, old_U = self.projections[domain_id].psi, self.kb.U
        new_proj = update_projection(update_stats(proj, record, self.eta_a(domain_id), self.kb), c.mu2)
        self.projections[domain_id] = new_proj
        self.kb = update_shared_base(self.kb, self.records, self.projections, c.mu3)
        loss_after = self.loss()
        guard_steps = 0
        if c.monotone_guard and loss_after > loss_before:
            # the closed-form updates ignore the aleph weighting; backtrack toward the old blocks
            new_psi, new_U = new_proj.psi, self.kb.U
            for guard_steps in range(1, 31):
                t = 0.5 ** guard_steps if guard_steps < 30 else 0.0
                self.projections[domain_id] = replace(new_proj, psi=old_psi + t * (new_psi - old_psi))
                self.kb = KnowledgeBase(old_U + t * (new_U - old_U))
                loss_after = self.loss()
                if loss_after <= loss_before:
                    break

        theta_v = reconstruct_policy(self.kb, self.projections[domain_id], v)
        if self._probe(policy, theta_v, task_cfg, pg_cfg, rng) >= self._probe(policy, policy.theta, task_cfg, pg_cfg, rng):
            policy = replace(policy, theta=theta_v)
        train(c.polish_iterations, "polish")
        return TaskResult(record, policy, history, warm, loss_before, loss_after, guard_steps, selection)

    def _probe(self, policy, theta, task_cfg, pg_cfg, rng) -> float:
        ro = rollout(replace(policy, theta=theta), task_cfg, rng, self.config.probe_trajectories, pg_cfg.horizon)
        return float(ro.rewards.mean())

    def _select_start(self, prior, proj, policy, task_cfg, pg_cfg, rng):
        """Best start on a short probe: each stored code, the domain mean, or the zero code."""
        codes = [r.code_v for r in prior]
        if len(codes) > 1:
            codes.append(np.mean(codes, axis=0))
        codes.append(np.zeros(self.kb.num_components_r))
        best, scores = None, []
        for v in codes:
            theta = reconstruct_policy(self.kb, proj, v)
            score = self._probe(policy, theta, task_cfg, pg_cfg, rng)
            scores.append(score)
            if best is None or score > best[0]:
                best = (score, theta)
        return best[1], scores

    # --- persistence --------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "dims": {"d": self.kb.latent_dim_d, "r": self.kb.num_components_r, "seed": self.seed},
            "config": asdict(self.config),
            "U": self.kb.U.tolist(),
            "domains": [
                {
                    "domain_id": k,
                    "n_secondary": dom.n_secondary,
                    "state_dim": dom.state_dim,
                    "action_dim": dom.action_dim,
                    "tasks_seen": self.projections[k].tasks_seen,
                    "psi": self.projections[k].psi.tolist(),
                    "stat_X": self.projections[k].stat_X.tolist(),
                    "stat_Y": self.projections[k].stat_Y.tolist(),
                }
                for k, dom in self.domains.items()
            ],
            "records": [
                {
                    "task_id": rec.task_id,
                    "domain_id": rec.domain_id,
                    "rho": rec.rho.tolist(),
                    "aleph": rec.aleph.tolist(),
                    "code_v": rec.code_v.tolist(),
                    "task_config": asdict(rec.task_config) if rec.task_config is not None else None,
                }
                for rec in self.records
            ],
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, data: dict) -> "LifelongAgent":
        if data.get("format") != FORMAT_NAME:
            raise ValidationError("format", f"not a {FORMAT_NAME} file")
        if data.get("version") != FORMAT_VERSION:
            raise ValidationError("version", f"unsupported version {data.get('version')}")
        agent = cls(LifelongConfig(**data["config"]), seed=data["dims"]["seed"],
                    kb=KnowledgeBase(np.array(data["U"], dtype=float)))
        for dom in data["domains"]:
            k = dom["domain_id"]
            agent.domains[k] = DomainConfig(k, dom["n_secondary"], dom["state_dim"], dom["action_dim"])
            agent.projections[k] = DomainProjection(
                np.array(dom["psi"], dtype=float), np.array(dom["stat_X"], dtype=float),
                np.array(dom["stat_Y"], dtype=float), dom["tasks_seen"], k,
            )
        for rec in data["records"]:
            tc = rec["task_config"]
            agent.records.append(TaskRecord(
                rec["task_id"], rec["domain_id"], np.array(rec["rho"], dtype=float),
                np.array(rec["aleph"], dtype=float), np.array(rec["code_v"], dtype=float),
                TaskConfig(**tc) if tc is not None else None,
            ))
        return agent

    @classmethod
    def load(cls, path) -> "LifelongAgent":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
