import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swiptbench.env import (
    ActionFeasible,
    DomainConfig,
    SlotState,
    SwiptNetwork,
    TaskConfig,
    check_feasible,
    dbm_to_mw,
    harvest_power,
    idle_action,
    initial_state,
    mw_to_dbm,
    project_feasible,
    sample_arrivals,
    sample_channels,
    state_vector,
    step,
    transmit_amount,
)
from swiptbench.errors import InfeasibleAction, NonFiniteAction, ValidationError

# mpmath at 40 digits: 5e6 * log2(1 + 100 * 0.3 / 1e-12) * 0.5
SHANNON_TABLE1 = 111925069.33564228698
# mpmath: 1e6 * log2(1 + 2 * 0.7 / 1) * 0.25
SHANNON_UNIT_NOISE = 315758.60145844845840
# mpmath: 0.3 * sqrt(pi / 2)
RAYLEIGH_MEAN_03 = 0.37599424119465007536


def _state(q, b, h, hp):
    return SlotState(np.array(q, float), np.array(b, float), np.array(h, float), np.array(hp, float))


def test_dbm_round_trip():
    assert dbm_to_mw(0.0) == pytest.approx(1.0)
    assert dbm_to_mw(30.0) == pytest.approx(1000.0)
    assert mw_to_dbm(dbm_to_mw(-90.0)) == pytest.approx(-90.0)


def test_config_broadcasts_and_dims():
    cfg = TaskConfig(n_secondary=3, comm_scale_zeta=0.4)
    assert cfg.comm_scale_zeta == (0.4, 0.4, 0.4, 0.4)
    assert len(cfg.eh_scale_zeta_prime) == 3
    assert cfg.state_dim == 4 * 3 + 2
    assert cfg.action_dim == 2 * 3 + 2
    dom = DomainConfig.from_task(cfg, 5)
    assert dom.policy_dim == cfg.state_dim * cfg.action_dim


@pytest.mark.parametrize("kw,field", [
    ({"n_secondary": 0}, "n_secondary"),
    ({"comm_scale_zeta": 0.0}, "comm_scale_zeta"),
    ({"eh_scale_zeta_prime": -1.0}, "eh_scale_zeta_prime"),
    ({"conv_eff_lambda": 1.5}, "conv_eff_lambda"),
    ({"slot_duration": 0.0}, "slot_duration"),
])
def test_config_rejects_bad_values(kw, field):
    with pytest.raises(ValidationError) as exc:
        TaskConfig(**kw)
    assert exc.value.field == field


def test_rayleigh_mean_against_closed_form():
    cfg = TaskConfig(n_secondary=1, comm_scale_zeta=0.3, eh_scale_zeta_prime=0.3)
    h, hp = sample_channels(cfg, np.random.default_rng(0), batch=100_000)
    assert h.mean() == pytest.approx(RAYLEIGH_MEAN_03, rel=0.02)
    assert hp.mean() == pytest.approx(RAYLEIGH_MEAN_03, rel=0.02)
    assert np.all(h >= 0)


def test_channel_sampling_is_seeded():
    cfg = TaskConfig()
    a = sample_channels(cfg, np.random.default_rng(3), batch=4)
    b = sample_channels(cfg, np.random.default_rng(3), batch=4)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_arrivals_zero_rate_and_clip():
    rng = np.random.default_rng(0)
    assert np.all(sample_arrivals(TaskConfig(arrival_rate_lambda_a=0.0), rng, batch=50) == 0)
    clipped = sample_arrivals(TaskConfig(arrival_rate_lambda_a=5.0, arrival_max_A=100.0), rng, batch=50)
    assert np.all(clipped <= 100.0)


def test_arrival_mean_is_rate_in_kbit():
    a = sample_arrivals(TaskConfig(arrival_rate_lambda_a=5.0), np.random.default_rng(1), batch=20_000)
    assert a.mean() == pytest.approx(5000.0, rel=0.02)


def test_transmit_amount_oracles():
    assert transmit_amount(100.0, 0.3, 0.0, TaskConfig()) == 0.0
    assert transmit_amount(100.0, 0.3, 0.5, TaskConfig()) == pytest.approx(SHANNON_TABLE1, rel=1e-12)
    unit = TaskConfig(bandwidth_W=1e6, noise_N0=1.0)
    assert transmit_amount(2.0, 0.7, 0.25, unit) == pytest.approx(SHANNON_UNIT_NOISE, rel=1e-12)
    norm = TaskConfig(bandwidth_W=1.0, noise_N0=1.0)
    assert transmit_amount(1.0, 1.0, 1.0, norm) == pytest.approx(1.0)


def test_harvest_power_examples():
    cfg = TaskConfig(n_secondary=2, p0_max=300.0, conv_eff_lambda=0.5)
    # lambda (P0 - p0) / N h' = 0.5 * 200 / 2 * 0.4
    np.testing.assert_allclose(harvest_power(100.0, np.array([0.4, 0.2]), cfg), [20.0, 10.0])
    assert harvest_power(100.0, 0.4, cfg, node=1) == pytest.approx(20.0)
    assert harvest_power(300.0, 0.4, cfg, node=2) == 0.0


def test_projection_extremes():
    cfg = TaskConfig(n_secondary=2)
    st0 = initial_state(cfg, np.random.default_rng(0))
    low = project_feasible(np.full(cfg.action_dim, -50.0), st0, cfg)
    assert low.p0 < 1e-15
    assert low.alpha_tx.sum() + low.alpha_eh.sum() < 1e-15
    mid = project_feasible(np.zeros(cfg.action_dim), st0, cfg)
    assert mid.p0 == pytest.approx(cfg.p0_max / 2)
    # equal logits plus the idle slot split the airtime into 2N + 2 parts
    np.testing.assert_allclose(mid.alpha_tx, 1.0 / 6.0)


def test_projection_rejects_bad_input():
    cfg = TaskConfig(n_secondary=2)
    st0 = initial_state(cfg, np.random.default_rng(0))
    with pytest.raises(InfeasibleAction):
        project_feasible(np.zeros(cfg.action_dim + 1), st0, cfg)
    raw = np.zeros(cfg.action_dim)
    raw[2] = np.nan
    with pytest.raises(NonFiniteAction):
        project_feasible(raw, st0, cfg)


def test_check_feasible_rejects_overdraw():
    cfg = TaskConfig(n_secondary=1)
    s = _state([0, 0], [5.0], [0.2, 0.2], [0.1])
    bad = ActionFeasible(np.float64(0.0), np.array([0.0, 0.5]), np.array([0.0]), np.array([100.0]))
    with pytest.raises(InfeasibleAction):
        check_feasible(s, bad, cfg)
    over = ActionFeasible(np.float64(0.0), np.array([0.6, 0.0]), np.array([0.6]), np.array([0.0]))
    with pytest.raises(InfeasibleAction):
        check_feasible(s, over, cfg)


def test_idle_step_accumulates_arrivals():
    cfg = TaskConfig(n_secondary=2, penalty_nu=0.01)
    s = _state([10.0, 20.0, 30.0], [40.0, 60.0], [0.2, 0.2, 0.2], [0.1, 0.1])
    out = step(s, idle_action(cfg), cfg, np.random.default_rng(0))
    np.testing.assert_allclose(out.next_state.queues_q, s.queues_q + out.arrivals_a)
    np.testing.assert_allclose(out.next_state.batteries_b, s.batteries_b)
    assert out.reward == pytest.approx(-0.01 * 60.0)
    assert out.next_state.slot_index_t == 1


def test_battery_bookkeeping_example():
    # b = 50, consume 100 * 0.1 = 10, harvest 1 * (300 - 100) / 1 * 0.2 * 0.5 = 20
    cfg = TaskConfig(n_secondary=1, conv_eff_lambda=1.0, penalty_nu=0.0)
    s = _state([0.0, 0.0], [50.0], [0.2, 0.2], [0.2])
    act = ActionFeasible(np.float64(100.0), np.array([0.0, 0.1]), np.array([0.5]), np.array([100.0]))
    out = step(s, act, cfg, np.random.default_rng(0))
    assert out.next_state.batteries_b[0] == pytest.approx(60.0)
    assert out.consumed_mJ[1] == pytest.approx(10.0)
    assert out.harvested_mJ[0] == pytest.approx(20.0)


def test_battery_overflow_penalized():
    cfg = TaskConfig(n_secondary=1, conv_eff_lambda=1.0, penalty_nu=0.5, battery_cap_B=55.0)
    s = _state([0.0, 0.0], [50.0], [0.2, 0.2], [0.2])
    act = ActionFeasible(np.float64(100.0), np.array([0.0, 0.0]), np.array([0.5]), np.array([0.0]))
    out = step(s, act, cfg, np.random.default_rng(0))
    assert out.next_state.batteries_b[0] == pytest.approx(55.0)
    assert out.battery_overflow_mJ[0] == pytest.approx(15.0)
    assert out.reward == pytest.approx(-0.5 * 15.0)


def test_service_beyond_queue_leaves_only_arrivals():
    cfg = TaskConfig(n_secondary=1)
    s = _state([5.0, 0.0], [50.0], [0.5, 0.2], [0.1])
    act = ActionFeasible(np.float64(300.0), np.array([0.5, 0.0]), np.array([0.0]), np.array([0.0]))
    out = step(s, act, cfg, np.random.default_rng(0))
    assert out.next_state.queues_q[0] == out.arrivals_a[0]


def test_state_vector_layout():
    cfg = TaskConfig(n_secondary=1, buffer_cap_rho=100.0, battery_cap_B=10.0, initial_battery=5.0)
    s = _state([50.0, 10.0], [5.0], [0.3, 0.4], [0.7])
    np.testing.assert_allclose(state_vector(s, cfg), [0.5, 0.1, 0.5, 0.3, 0.4, 0.7])


def test_network_determinism():
    cfg = TaskConfig()
    raw = np.random.default_rng(9).standard_normal((20, cfg.action_dim))
    runs = []
    for _ in range(2):
        net = SwiptNetwork(cfg, seed=42)
        runs.append([float(net.step_raw(u).reward) for u in raw])
    assert runs[0] == runs[1]


finite = st.floats(-20, 20, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31 - 1), st.lists(finite, min_size=10, max_size=10))
def test_projection_always_feasible(n, seed, raw_pool):
    cfg = TaskConfig(n_secondary=n, power_mode="learned")
    rng = np.random.default_rng(seed)
    s = initial_state(cfg, rng)
    s.batteries_b = rng.uniform(0, cfg.battery_cap_B, n)
    raw = np.resize(np.array(raw_pool), cfg.action_dim)
    act = project_feasible(raw, s, cfg)
    check_feasible(s, act, cfg)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31 - 1), st.integers(1, 30))
def test_step_laws_hold(n, seed, slots):
    cfg = TaskConfig(n_secondary=n)
    rng = np.random.default_rng(seed)
    s = initial_state(cfg, rng)
    for _ in range(slots):
        act = project_feasible(rng.normal(0, 3, cfg.action_dim), s, cfg)
        out = step(s, act, cfg, rng)
        q_expect = np.minimum(np.maximum(s.queues_q - out.served_bits_d, 0) + out.arrivals_a, cfg.buffer_cap_rho)
        np.testing.assert_allclose(out.next_state.queues_q, q_expect)
        b_pre = s.batteries_b - out.consumed_mJ[1:] + out.harvested_mJ
        np.testing.assert_allclose(out.next_state.batteries_b, np.clip(b_pre, 0, cfg.battery_cap_B))
        assert np.all(out.consumed_mJ[1:] <= s.batteries_b + 1e-9)
        assert np.all(out.next_state.batteries_b >= 0)
        assert np.all(out.next_state.queues_q >= 0)
        s = out.next_state
