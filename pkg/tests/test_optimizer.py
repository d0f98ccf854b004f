import numpy as np
import pytest
from dataclasses import replace
from scipy.optimize import minimize

from relayfl.aggregation import (
    DeviceWeights,
    PowerBudget,
    SingularChannelError,
    TransceiverConfig,
    max_constraint_violation,
    norelay_optimum,
    relay_mse,
    relay_power_used,
)
from relayfl.geometry import ChannelRealization, stream
from relayfl.optimizer import (
    SchemeVariant,
    SolverConfig,
    init_config,
    solve,
    update_c1,
    update_c2,
    update_device_scalars,
    update_relay_scalars,
)

from oracles import device_update_oracle, fd_complex_gradient

SOLVER = SolverConfig()


def random_instance(seed, num_devices, num_relays, p0=1.0, pr=2.0, sigma2=0.1,
                    uniform=True):
    rng = stream(seed)
    k, n = num_devices, num_relays
    ch = ChannelRealization(
        h=(rng.standard_normal(k) + 1j * rng.standard_normal(k)) * np.sqrt(0.5),
        g=(rng.standard_normal((k, n)) + 1j * rng.standard_normal((k, n))) * np.sqrt(0.5),
        f=(rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(0.5),
    )
    weights = (DeviceWeights.uniform(k) if uniform
               else DeviceWeights.from_counts(rng.integers(1, 9, k)))
    return ch, weights, PowerBudget(p0=p0, pr=pr, sigma2=sigma2), rng


def misalignment_of(config, ch, weights):
    relay_path = ch.g @ (ch.f * config.b) if config.b.size else 0.0
    gains = (config.c1 * ch.h * config.a1 + config.c2 * ch.h * config.a2
             + config.c2 * config.a1 * relay_path)
    return float(np.sum(np.abs(gains - weights.rho) ** 2))


class TestInitConfig:
    def test_single_device_unit_channel(self):
        ch = ChannelRealization(h=[1.0 + 0j], g=[[1.0 + 0j]], f=[1.0 + 0j])
        cfg = init_config(ch, DeviceWeights([1.0]), PowerBudget(p0=1.0, pr=2.0, sigma2=0.5))
        assert cfg.a1 == pytest.approx([1.0])
        assert cfg.a2 == pytest.approx([1.0])
        assert cfg.c1 == pytest.approx(0.5)
        assert cfg.c2 == pytest.approx(0.5)

    def test_relay_powers_start_active(self):
        ch, weights, budget, _ = random_instance(81, 4, 2)
        cfg = init_config(ch, weights, budget)
        used = relay_power_used(cfg, ch, budget.sigma2)
        assert used == pytest.approx(np.full(2, budget.pr), rel=1e-12)

    def test_symmetric_channels_equal_scalars(self):
        ch = ChannelRealization(h=[2.0 + 0j, 2.0 + 0j], g=np.ones((2, 1)), f=[1.0 + 0j])
        cfg = init_config(ch, DeviceWeights.uniform(2), PowerBudget(p0=1.0, pr=1.0, sigma2=0.1))
        assert cfg.a1[0] == pytest.approx(cfg.a1[1])
        assert cfg.a2[0] == pytest.approx(cfg.a2[1])

    def test_zero_channel_rejected(self):
        ch = ChannelRealization(h=[0j, 1 + 0j], g=np.ones((2, 1)), f=[1.0 + 0j])
        with pytest.raises(SingularChannelError):
            init_config(ch, DeviceWeights.uniform(2), PowerBudget(p0=1.0, pr=1.0, sigma2=0.1))

    def test_direct_paths_align_perfectly(self):
        ch, weights, budget, _ = random_instance(82, 5, 0)
        cfg = init_config(ch, weights, budget)
        combined = (cfg.c1 + cfg.c2) * ch.h * cfg.a1
        assert combined == pytest.approx(weights.rho, abs=1e-14)


class TestDeviceUpdate:
    def test_flat_objective_keeps_input(self):
        ch, weights, budget, _ = random_instance(83, 3, 1)
        cfg = init_config(ch, weights, budget)
        flat = replace(cfg, c1=0.0, c2=0.0)
        a1, a2, ok = update_device_scalars(flat, ch, weights, budget, SOLVER)
        assert ok
        assert a1 == pytest.approx(flat.a1)
        assert a2 == pytest.approx(flat.a2)

    def test_single_device_reaches_zero_misalignment(self):
        ch = ChannelRealization(h=[1.0 + 0j], g=np.zeros((1, 0)), f=np.zeros(0))
        weights = DeviceWeights([1.0])
        budget = PowerBudget(p0=100.0, pr=1.0, sigma2=0.1)
        cfg = TransceiverConfig(a1=[0.1 + 0j], a2=[0.1 + 0j], b=np.zeros(0), c1=1.0, c2=1.0)
        a1, a2, ok = update_device_scalars(cfg, ch, weights, budget, SOLVER)
        final = replace(cfg, a1=a1, a2=a2)
        assert ok
        assert misalignment_of(final, ch, weights) <= 1e-8

    @pytest.mark.parametrize("seed", [101, 102, 103, 104])
    def test_matches_slsqp_oracle(self, seed):
        ch, weights, budget, _ = random_instance(seed, 2, 1, sigma2=0.2)
        cfg = init_config(ch, weights, budget)
        # move off the initial point so the subproblem is nontrivial
        cfg = replace(cfg, c1=update_c1(cfg, ch, weights, budget.sigma2))
        cfg = replace(cfg, c2=update_c2(cfg, ch, weights, budget.sigma2))
        a1, a2, _ = update_device_scalars(cfg, ch, weights, budget, SOLVER)
        mine = misalignment_of(replace(cfg, a1=a1, a2=a2), ch, weights)
        oracle = device_update_oracle(cfg, ch, weights, budget, seed=seed)
        assert mine <= oracle * (1 + 1e-4) + 1e-12
        assert mine >= oracle * (1 - 1e-4) - 1e-12

    def test_never_increases_objective(self):
        for seed in range(120, 130):
            ch, weights, budget, _ = random_instance(seed, 4, 2)
            cfg = init_config(ch, weights, budget)
            cfg = replace(cfg, c2=1.5 * cfg.c2)  # off-optimum incoming point
            before = misalignment_of(cfg, ch, weights)
            a1, a2, _ = update_device_scalars(cfg, ch, weights, budget, SOLVER)
            after = misalignment_of(replace(cfg, a1=a1, a2=a2), ch, weights)
            assert after <= before * (1 + 1e-12) + 1e-15
            assert max_constraint_violation(replace(cfg, a1=a1, a2=a2), ch, budget) <= 1e-9


class TestRelayUpdate:
    def test_radial_projection_worked_example(self):
        # stationary point lands at 3+4i and the power cap allows magnitude 2
        ch = ChannelRealization(h=[1.0 + 0j], g=[[1.0 + 0j]], f=[1.0 + 0j])
        cfg = TransceiverConfig(a1=[1.0 + 0j], a2=[-5.0 - 8.0j], b=[0j], c1=0.0, c2=1.0)
        budget = PowerBudget(p0=100.0, pr=8.0, sigma2=1.0)
        b, warn = update_relay_scalars(cfg, ch, DeviceWeights([1.0]), budget)
        assert warn is None
        assert b[0] == pytest.approx(1.2 + 1.6j, rel=1e-12)

    def test_interior_point_unchanged(self):
        ch = ChannelRealization(h=[1.0 + 0j], g=[[1.0 + 0j]], f=[1.0 + 0j])
        cfg = TransceiverConfig(a1=[1.0 + 0j], a2=[0j], b=[0j], c1=0.0, c2=1.0)
        budget = PowerBudget(p0=100.0, pr=8.0, sigma2=1.0)
        # unconstrained stationary point is rho / (c2 (|a1|^2 + sigma2)) = 0.5
        b, _ = update_relay_scalars(cfg, ch, DeviceWeights([1.0]), budget)
        assert b[0] == pytest.approx(0.5, rel=1e-12)

    def test_dominates_random_feasible_points(self):
        ch, weights, budget, rng = random_instance(140, 1, 1)
        cfg = init_config(ch, weights, budget)
        b_star, _ = update_relay_scalars(cfg, ch, weights, budget)
        value = relay_mse(replace(cfg, b=b_star), ch, weights, budget.sigma2)
        cap = budget.pr / (np.abs(ch.g[:, 0]) ** 2 @ np.abs(cfg.a1) ** 2 + budget.sigma2)
        for _ in range(1000):
            b = np.sqrt(cap) * rng.uniform(0, 1) * np.exp(2j * np.pi * rng.uniform())
            trial = relay_mse(replace(cfg, b=np.array([b])), ch, weights, budget.sigma2)
            assert value <= trial + 1e-9

    def test_stationarity_when_interior(self):
        ch, weights, budget, _ = random_instance(141, 3, 2, pr=1e6)
        cfg = init_config(ch, weights, budget)
        b_star, _ = update_relay_scalars(cfg, ch, weights, budget)
        caps = budget.pr / ((np.abs(ch.g) ** 2).T @ np.abs(cfg.a1) ** 2 + budget.sigma2)
        assert np.all(np.abs(b_star) < np.sqrt(caps))  # interior for huge relay power
        for n in range(2):
            def objective(bn, n=n):
                b = b_star.copy()
                b[n] = bn
                return relay_mse(replace(cfg, b=b), ch, weights, budget.sigma2)
            grad = fd_complex_gradient(objective, b_star[n])
            assert abs(grad) < 1e-5

    def test_idempotent(self):
        ch, weights, budget, _ = random_instance(142, 4, 2)
        cfg = init_config(ch, weights, budget)
        b1, _ = update_relay_scalars(cfg, ch, weights, budget)
        b2, _ = update_relay_scalars(replace(cfg, b=b1), ch, weights, budget)
        assert b2 == pytest.approx(b1, rel=1e-12)

    def test_requires_nonzero_c2(self):
        ch, weights, budget, _ = random_instance(143, 2, 1)
        cfg = replace(init_config(ch, weights, budget), c2=0.0)
        with pytest.raises(ValueError):
            update_relay_scalars(cfg, ch, weights, budget)

    def test_zero_relay_to_ap_gain_flagged(self):
        ch = ChannelRealization(h=[1.0 + 0j], g=[[1.0 + 0j]], f=[0j])
        cfg = TransceiverConfig(a1=[1.0 + 0j], a2=[0j], b=[0j], c1=0.0, c2=1.0)
        b, warn = update_relay_scalars(cfg, ch, DeviceWeights([1.0]),
                                       PowerBudget(p0=1.0, pr=1.0, sigma2=1.0))
        assert warn is not None
        assert b[0] == pytest.approx(0.0)


class TestReceiveScalars:
    def test_c1_single_device_value(self):
        ch = ChannelRealization(h=[1.0 + 0j], g=np.zeros((1, 0)), f=np.zeros(0))
        cfg = TransceiverConfig(a1=[1.0 + 0j], a2=[0j], b=np.zeros(0), c1=0.0, c2=0.0)
        assert update_c1(cfg, ch, DeviceWeights([1.0]), 1.0) == pytest.approx(0.5)

    def test_c1_zero_when_phase1_silent(self):
        ch, weights, budget, _ = random_instance(150, 3, 1)
        cfg = replace(init_config(ch, weights, budget), a1=np.zeros(3, dtype=complex))
        assert update_c1(cfg, ch, weights, budget.sigma2) == 0.0

    def test_c2_zero_when_phase2_silent(self):
        ch, weights, budget, _ = random_instance(151, 3, 1)
        cfg = replace(init_config(ch, weights, budget),
                      a2=np.zeros(3, dtype=complex), b=np.zeros(1, dtype=complex))
        assert update_c2(cfg, ch, weights, budget.sigma2) == 0.0

    def test_c2_relay_free_reduction(self):
        ch, weights, budget, _ = random_instance(152, 1, 0)
        cfg = init_config(ch, weights, budget)
        h, a1, a2 = ch.h[0], cfg.a1[0], cfg.a2[0]
        expected = ((weights.rho[0] - cfg.c1 * h * a1) * np.conj(h * a2)
                    / (abs(h * a2) ** 2 + budget.sigma2))
        assert update_c2(cfg, ch, weights, budget.sigma2) == pytest.approx(expected)

    @pytest.mark.parametrize("seed", [160, 161, 162])
    def test_stationarity(self, seed):
        ch, weights, budget, _ = random_instance(seed, 4, 2)
        cfg = init_config(ch, weights, budget)
        c1_star = update_c1(cfg, ch, weights, budget.sigma2)
        grad1 = fd_complex_gradient(
            lambda v: relay_mse(replace(cfg, c1=v), ch, weights, budget.sigma2), c1_star)
        assert abs(grad1) < 1e-5
        c2_star = update_c2(cfg, ch, weights, budget.sigma2)
        grad2 = fd_complex_gradient(
            lambda v: relay_mse(replace(cfg, c2=v), ch, weights, budget.sigma2), c2_star)
        assert abs(grad2) < 1e-5

    def test_idempotent(self):
        ch, weights, budget, _ = random_instance(163, 3, 1)
        cfg = init_config(ch, weights, budget)
        c1 = update_c1(cfg, ch, weights, budget.sigma2)
        assert update_c1(replace(cfg, c1=c1), ch, weights, budget.sigma2) == pytest.approx(
            c1, rel=1e-12)
        c2 = update_c2(cfg, ch, weights, budget.sigma2)
        assert update_c2(replace(cfg, c2=c2), ch, weights, budget.sigma2) == pytest.approx(
            c2, rel=1e-12)


class TestSolve:
    @pytest.mark.parametrize("seed,k,n", [(170, 3, 1), (171, 5, 2), (172, 4, 0)])
    def test_monotone_and_feasible(self, seed, k, n):
        ch, weights, budget, _ = random_instance(seed, k, n)
        cfg, trace = solve(ch, weights, budget, SOLVER)
        diffs = np.diff(trace.objectives)
        assert np.all(diffs <= 1e-9 * np.abs(trace.objectives[:-1]))
        assert max_constraint_violation(cfg, ch, budget) <= 1e-9

    def test_feasibility_after_every_block(self):
        ch, weights, budget, _ = random_instance(173, 4, 2)
        cfg = init_config(ch, weights, budget)
        assert max_constraint_violation(cfg, ch, budget) <= 1e-9
        a1, a2, _ = update_device_scalars(cfg, ch, weights, budget, SOLVER)
        cfg = replace(cfg, a1=a1, a2=a2)
        assert max_constraint_violation(cfg, ch, budget) <= 1e-9
        b, _ = update_relay_scalars(cfg, ch, weights, budget)
        cfg = replace(cfg, b=b)
        assert max_constraint_violation(cfg, ch, budget) <= 1e-9
        cfg = replace(cfg, c1=update_c1(cfg, ch, weights, budget.sigma2))
        cfg = replace(cfg, c2=update_c2(cfg, ch, weights, budget.sigma2))
        assert max_constraint_violation(cfg, ch, budget) <= 1e-9

    def test_relay_free_two_phase_vs_single_phase_budgets(self):
        # Splitting the budget across two phases starts exactly at the aligned
        # single-phase optimum with the total budget (the initialization
        # emulates it), and descent can only improve from there; the aligned
        # half-budget scheme is always worse.
        ch, weights, budget, _ = random_instance(174, 4, 0)
        cfg, trace = solve(ch, weights, budget, SOLVER)
        final = trace.objectives[-1]
        _, _, full_budget = norelay_optimum(ch.h, weights, 2.0 * budget.p0, budget.sigma2)
        _, _, half_budget = norelay_optimum(ch.h, weights, budget.p0, budget.sigma2)
        assert trace.objectives[0] == pytest.approx(full_budget, rel=1e-12)
        assert final <= full_budget * (1 + 1e-9)
        assert final <= half_budget * (1 + 1e-9)

    def test_infinite_epsilon_stops_after_one_sweep(self):
        ch, weights, budget, _ = random_instance(175, 3, 1)
        cfg, trace = solve(ch, weights, budget, SolverConfig(epsilon=float("inf")))
        assert trace.iterations_run == 1
        assert trace.terminated_by == "converged"

    def test_relay_only_pins_and_budget(self):
        ch, weights, budget, _ = random_instance(176, 4, 2)
        cfg, trace = solve(ch, weights, budget, SOLVER, SchemeVariant.RELAY_ONLY)
        assert np.all(cfg.a2 == 0)
        assert cfg.c1 == 0
        assert np.all(np.abs(cfg.a1) ** 2 <= 2.0 * budget.p0 * (1 + 1e-9))
        assert max_constraint_violation(cfg, ch, budget,
                                        phase1_budget=2.0 * budget.p0) <= 1e-9
        diffs = np.diff(trace.objectives)
        assert np.all(diffs <= 1e-9 * np.abs(trace.objectives[:-1]))

    def test_warm_start_trace_begins_at_given_config(self):
        ch, weights, budget, _ = random_instance(177, 3, 1)
        start = init_config(ch, weights, budget)
        start = replace(start, c2=0.7 * start.c2)
        cfg, trace = solve(ch, weights, budget, SOLVER, warm_start=start)
        assert trace.objectives[0] == pytest.approx(
            relay_mse(start, ch, weights, budget.sigma2))
        assert trace.objectives[-1] <= trace.objectives[0] + 1e-12

    def test_single_phase_variant_rejected(self):
        ch, weights, budget, _ = random_instance(178, 2, 1)
        with pytest.raises(ValueError):
            solve(ch, weights, budget, SOLVER, SchemeVariant.NO_RELAY_SINGLEPHASE)

    def test_dead_phase2_keeps_relays_silent(self):
        # with c2 = 0 the relay update is skipped for the sweep; the dead
        # phase-2 path stays dead and the solver still descends monotonically
        ch, weights, budget, _ = random_instance(179, 3, 1)
        k = 3
        start = TransceiverConfig(
            a1=np.full(k, 0.1 + 0j), a2=np.zeros(k, dtype=complex),
            b=np.zeros(1, dtype=complex), c1=1.0 + 0j, c2=0.0 + 0j)
        cfg, trace = solve(ch, weights, budget, SOLVER, warm_start=start)
        assert np.all(cfg.b == 0)
        assert cfg.c2 == 0
        diffs = np.diff(trace.objectives)
        assert np.all(diffs <= 1e-9 * np.abs(trace.objectives[:-1]))
