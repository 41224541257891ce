"""End-to-end acceptance checks, each with its own time budget.

Every test reports one PASS/FAIL line, repeated in the terminal summary.
"""
import time

import numpy as np
import pytest

from oracles import grid_objective_min, random_unit_state, unit_task
from swiptbench.cli import main
from swiptbench.env import initial_state, project_feasible, step
from swiptbench.harness import (
    ExperimentSpec,
    aggregate,
    convergence_iterations,
    run_sequential,
    sweep,
    table2_sequence,
    table2_task,
    task_series,
)
from swiptbench.lifelong import LifelongAgent, LifelongConfig
from swiptbench.lyapunov import LyapunovConfig, LyapunovController, per_slot_objective, solve_slot
from swiptbench.numerics import finite_diff_grad, pseudoinverse, weighted_lasso, weighted_lasso_objective
from swiptbench.pg import CriticParams, LinearGaussianPolicy, PGConfig, log_prob, log_prob_grad, train_iteration

pytestmark = pytest.mark.acceptance
SEEDS = (0, 1, 2, 3, 4)


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def test_c01_environment_laws(acceptance_report):
    def body():
        worst = 0.0
        for dom in (1, 2):
            for i in range(4):
                cfg = table2_task(dom, i)
                rng = np.random.default_rng([dom, i])
                s = initial_state(cfg, rng, batch=100)
                for _ in range(100):
                    act = project_feasible(rng.normal(0, 3, (100, cfg.action_dim)), s, cfg)
                    out = step(s, act, cfg, rng)
                    q = np.minimum(np.maximum(s.queues_q - out.served_bits_d, 0) + out.arrivals_a, cfg.buffer_cap_rho)
                    b = np.clip(s.batteries_b - out.consumed_mJ[:, 1:] + out.harvested_mJ, 0, cfg.battery_cap_B)
                    r = -out.consumed_mJ.sum(-1) - cfg.penalty_nu * (
                        out.battery_overflow_mJ.sum(-1) + np.maximum(s.queues_q - out.served_bits_d, 0).sum(-1))
                    worst = max(worst,
                                np.abs(out.next_state.queues_q - q).max() / max(1.0, q.max()),
                                np.abs(out.next_state.batteries_b - b).max(),
                                np.abs(out.reward - r).max() / max(1.0, np.abs(r).max()),
                                float(np.max(out.consumed_mJ[:, 1:] - s.batteries_b)))
                    assert np.all(out.next_state.batteries_b >= 0) and np.all(out.next_state.queues_q >= 0)
                    s = out.next_state
        return worst

    worst, dt = _timed(body)
    ok = worst <= 1e-9 and dt < 10
    acceptance_report(1, ok, f"8 tasks x 10^4 steps, worst law residual {worst:.2e}, {dt:.1f}s (limit 10s)")
    assert ok


def test_c02_lasso_and_pseudoinverse(acceptance_report):
    def body():
        rng = np.random.default_rng(2024)
        B = 50
        D = rng.standard_normal((B, 5, 5))
        A = rng.standard_normal((B, 5, 5))
        M = A @ A.transpose(0, 2, 1) + 0.1 * np.eye(5)
        t = rng.standard_normal((B, 5))
        mu = rng.uniform(0.01, 1.0, B)
        # oracle: projected gradient on the split v = p - n, p, n >= 0, all instances at once
        G = D.transpose(0, 2, 1) @ M @ D
        c = np.einsum("bji,bjk,bk->bi", D, M, t)
        step_size = (1.0 / (4.0 * np.linalg.eigvalsh(G).max(axis=1)))[:, None]
        p = np.zeros((B, 5))
        n = np.zeros((B, 5))
        for _ in range(200_000):
            g = 2.0 * (np.einsum("bij,bj->bi", G, p - n) - c)
            p = np.maximum(p - step_size * (g + mu[:, None]), 0.0)
            n = np.maximum(n - step_size * (mu[:, None] - g), 0.0)
        gap = 0.0
        for b in range(B):
            ours = weighted_lasso(t[b], D[b], M[b], mu[b], tol=1e-12)
            gap = max(gap, abs(weighted_lasso_objective(ours, t[b], D[b], M[b], mu[b])
                               - weighted_lasso_objective(p[b] - n[b], t[b], D[b], M[b], mu[b])))
        resid = 0.0
        for k in range(50):
            m, r = rng.integers(2, 21, size=2)
            rank = int(rng.integers(0, min(m, r) + 1))
            X = rng.standard_normal((m, rank)) @ rng.standard_normal((rank, r))
            P = pseudoinverse(X)
            resid = max(resid, np.linalg.norm(X @ P @ X - X), np.linalg.norm(P @ X @ P - P),
                        np.linalg.norm((X @ P).T - X @ P), np.linalg.norm((P @ X).T - P @ X))
        return gap, resid

    (gap, resid), dt = _timed(body)
    ok = gap <= 1e-6 and resid < 1e-8 and dt < 30
    acceptance_report(2, ok, f"LASSO objective gap {gap:.1e} (<=1e-6), Penrose residual {resid:.1e} (<1e-8), {dt:.1f}s")
    assert ok


def test_c03_log_likelihood_gradient(acceptance_report):
    def body():
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(100):
            S, A = int(rng.integers(2, 19)), int(rng.integers(1, 11))
            pol = LinearGaussianPolicy(rng.normal(0, 0.5, S * A), rng.normal(-0.5, 0.5, A), S, A)
            s = rng.uniform(0, 1, S)
            u = pol.mean(s) + pol.std * rng.standard_normal(A)
            k = S * A

            def f(x):
                return float(log_prob(LinearGaussianPolicy(x[:k], x[k:], S, A), s, u))

            fd = finite_diff_grad(f, np.concatenate([pol.theta, pol.log_std]), h=1e-6)
            g = log_prob_grad(pol, s, u)
            worst = max(worst, np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(fd)))
        return worst

    worst, dt = _timed(body)
    ok = worst < 1e-5 and dt < 10
    acceptance_report(3, ok, f"100 configurations, worst relative error {worst:.1e} (<1e-5), {dt:.1f}s")
    assert ok


def test_c04_alternating_minimization(acceptance_report):
    def body():
        rng = np.random.default_rng(4)
        lcfg = LyapunovConfig()
        monotone = True
        for i in range(500):
            if i % 2:
                cfg = unit_task(int(rng.integers(1, 5)))
                s = random_unit_state(cfg, rng)
            else:
                cfg = table2_task(1 + i % 4 // 2, int(rng.integers(0, 4)))
                s = initial_state(cfg, rng)
                s.queues_q = rng.uniform(0, 5e5, cfg.n_secondary + 1)
                s.batteries_b = rng.uniform(0, cfg.battery_cap_B, cfg.n_secondary)
            info = {}
            solve_slot(s, cfg, lcfg, info=info)
            tr = info["trace"]
            monotone &= all(b <= a + 1e-12 * max(1.0, abs(a)) for a, b in zip(tr, tr[1:]))
        worst = -np.inf
        cfg = unit_task(1)
        for _ in range(100):
            s = random_unit_state(cfg, rng)
            ours = per_slot_objective(s, solve_slot(s, cfg, lcfg), cfg, lcfg)
            ref = grid_objective_min(s, cfg)
            worst = max(worst, (ours - ref) / max(abs(ref), 1e-12))
        return monotone, worst

    (monotone, worst), dt = _timed(body)
    ok = monotone and worst <= 0.02 and dt < 120
    acceptance_report(4, ok, f"trace monotone on 500 states: {monotone}; N=1 worst excess over grid {100 * worst:.3f}% "
                             f"(<=2%), {dt:.1f}s")
    assert ok


def test_c05_lyapunov_queue_stability(acceptance_report):
    def body():
        cfg = table2_task(1, 0)
        ctl = LyapunovController(cfg, LyapunovConfig(beta=1.0))
        rng = np.random.default_rng(5)
        s = initial_state(cfg, rng)
        q = []
        for _ in range(5000):
            s = step(s, ctl.act(s), cfg, rng).next_state
            q.append(s.queues_q.mean())
        q = np.array(q)
        return q[2000:3000].mean(), q[-1000:].mean()

    (mid, last), dt = _timed(body)
    ok = last <= 1.2 * mid and dt < 60
    acceptance_report(5, ok, f"mean queue last 1000 slots {last:.1f} vs middle {mid:.1f} bits (ratio {last / mid:.3f} <= 1.2), "
                             f"{dt:.1f}s")
    assert ok


def test_c06_policy_gradient_learns(acceptance_report):
    def body():
        cfg = table2_task(1, 0)
        pg = PGConfig(iterations=50)
        first, last = [], []
        for seed in SEEDS:
            rng = np.random.default_rng([seed, 6])
            pol = LinearGaussianPolicy.zeros(cfg.state_dim, cfg.action_dim, pg.sigma_init)
            critic = CriticParams.zeros(cfg.state_dim)
            rewards = []
            for _ in range(pg.iterations):
                pol, critic, m = train_iteration(pol, critic, cfg, pg, rng)
                rewards.append(m["avg_reward"])
            first.append(rewards[0])
            last.append(rewards[-1])
        return float(np.median(first)), float(np.median(last))

    (first, last), dt = _timed(body)
    ok = last > first and dt < 300
    acceptance_report(6, ok, f"median reward iteration 1 {first:.3f} -> iteration 50 {last:.3f}, {dt:.1f}s")
    assert ok


def _domain1_spec(tasks, controllers, seeds=SEEDS):
    seq = table2_sequence(domains=(1,))
    seq[0].tasks = [seq[0].tasks[i] for i in tasks]
    return ExperimentSpec(name="d1", domain_sequence=seq, controllers=controllers, seeds=seeds)


def test_c07_transfer_speeds_convergence(acceptance_report):
    def body():
        cd_idx, pg_idx = [], []
        lifelong = _domain1_spec([0, 1, 2, 3], ("cdl2rl",))
        cold = _domain1_spec([3], ("pgrl",))
        for seed in SEEDS:
            rows = run_sequential(lifelong, "cdl2rl", seed)
            cd_idx.append(convergence_iterations([r.avg_reward for r in task_series(rows)[("D1", "T4")]]))
            rows = run_sequential(cold, "pgrl", seed)
            pg_idx.append(convergence_iterations([r.avg_reward for r in task_series(rows)[("D1", "T4")]]))
        return cd_idx, pg_idx

    (cd_idx, pg_idx), dt = _timed(body)
    ratio = float(np.median(cd_idx)) / float(np.median(pg_idx))
    wins = sum(c < p for c, p in zip(cd_idx, pg_idx))
    ok = ratio <= 0.85 and wins >= 4 and dt < 900
    acceptance_report(7, ok, f"T4 convergence cdl2rl {cd_idx} vs cold pgrl {pg_idx}: median ratio {ratio:.2f} (<=0.85), "
                             f"faster in {wins}/5 (>=4), {dt:.0f}s")
    assert ok


def test_c08_lifelong_sequence_invariants(acceptance_report):
    def body():
        agent = LifelongAgent(LifelongConfig(), seed=0)
        rng = np.random.default_rng([0, 8])
        pg = PGConfig()
        finite, isolated, monotone = True, True, True
        for ds in table2_sequence():
            for _label, cfg in ds.tasks:
                before = {k: p.psi.copy() for k, p in agent.projections.items()}
                res = agent.observe_task(cfg, ds.domain.domain_id, pg, rng)
                monotone &= res.loss_after <= res.loss_before + 1e-9 * max(1.0, abs(res.loss_before))
                for k, psi in before.items():
                    if k != ds.domain.domain_id:
                        isolated &= np.array_equal(agent.projections[k].psi, psi)
                mats = [agent.kb.U] + [p.psi for p in agent.projections.values()]
                mats += [m for r in agent.records for m in (r.rho, r.aleph, r.code_v)]
                finite &= all(np.all(np.isfinite(m)) for m in mats)
                finite &= all(np.isfinite(m["avg_reward"]) for m in res.iterations)
        return finite, isolated, monotone, len(agent.records)

    (finite, isolated, monotone, n), dt = _timed(body)
    ok = finite and isolated and monotone and n == 8 and dt < 1200
    acceptance_report(8, ok, f"{n} tasks: finite {finite}, domain isolation {isolated}, loss non-increasing {monotone}, "
                             f"{dt:.0f}s")
    assert ok


def test_c09_conversion_efficiency_energy(acceptance_report):
    def body():
        spec = _domain1_spec([0, 1, 2, 3], ("lyapunov", "pgrl", "cdl2rl"))
        table = sweep("conv_eff", spec, seeds=SEEDS)
        return aggregate(table, ("point", "controller"), "avg_energy_mJ_per_slot")

    summary, dt = _timed(body)
    med = {(s["point"], s["controller"]): s["median"] for s in summary}
    points = sorted({s["point"] for s in summary})
    ok_points = [med[(p, "cdl2rl")] <= 1.05 * med[(p, "pgrl")] for p in points]
    orders = []
    for p in points:
        ranked = sorted(("lyapunov", "pgrl", "cdl2rl"), key=lambda c: med[(p, c)])
        orders.append(f"{p}: " + " < ".join(f"{c} {med[(p, c)]:.4g}" for c in ranked))
    ok = all(ok_points) and dt < 1200
    acceptance_report(9, ok, f"cdl2rl <= 1.05x pgrl at {sum(ok_points)}/{len(points)} points, {dt:.0f}s; energy order (mJ/slot) "
                             + "; ".join(orders))
    assert ok


def test_c10_cli_run_is_reproducible(acceptance_report, tmp_path):
    def body():
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = main(["run", "--preset", "table2", "--seed", "0", "--out", str(out), "--format", "csv"])
            outs.append((code, (out / "metrics.csv").read_bytes() if code == 0 else b""))
        return outs

    outs, dt = _timed(body)
    same = outs[0][1] == outs[1][1] and len(outs[0][1]) > 0
    ok = outs[0][0] == 0 and outs[1][0] == 0 and same and dt < 300
    acceptance_report(10, ok, f"two table2 runs (seed 0): exit codes {outs[0][0]}/{outs[1][0]}, identical CSV {same} "
                              f"({len(outs[0][1])} bytes), {dt:.0f}s")
    assert ok
