from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saddlesplit.energy import LINEAR_CONTRACTIVE, NONLINEAR_CONTRACTIVE, GinzburgLandau1D
from saddlesplit.experiments import CH_NEUMANN_INIT, reference_data
from saddlesplit.fields import Grid, Metric, l2_inner, mass
from saddlesplit.imf import (
    AuxProblem,
    IMFOptions,
    InnerStop,
    aux_gradient,
    aux_gradient_l2,
    aux_gradient_norm,
    aux_value,
    branch_split,
    build_aux_split,
    force_norm,
    phi_hat,
    run_cycle,
    run_imf,
)
from saddlesplit.initial import make_initial
from saddlesplit.minmode import EigOptions, min_mode
from saddlesplit.schemes import StepperConfig, make_stepper

from conftest import dense_inv_neg_laplacian, rel_err


def wave(grid, seed, mean=0.0, amp=0.4):
    rng = np.random.default_rng(seed)
    (x,) = grid.coords
    u = sum(rng.uniform(-1, 1) * np.cos(2 * np.pi * k * x + rng.uniform(0, 2 * np.pi)) for k in range(1, 4))
    return mean + amp * u / np.max(np.abs(u))


def problem(metric="l2", bc="periodic", alpha=0.0, beta=2.0, n=64, seed=0):
    grid = Grid.line(n, 1.0, bc)
    model = GinzburgLandau1D(kappa=0.04)
    mean = 0.3 if metric == "hminus1" else 0.0
    phi_k = wave(grid, seed, mean)
    v = min_mode(model, grid, phi_k, EigOptions(metric=metric, deflate_translation=False)).vector
    return AuxProblem(model, grid, phi_k, v, Metric(metric, grid), alpha, beta)


def nearby(p, seed, amp=0.1):
    """``phi_k`` plus a mass-free perturbation."""
    d = wave(p.grid, 1000 + seed, 0.0, amp)
    d = d - np.sum(p.grid.weights * d) / p.grid.volume
    return p.phi_k + d


METRICS = ["l2", "hminus1"]
BRANCHES = [(0.0, 2.0), (0.5, 1.5), (2.0, -0.5), (-0.5, 2.0)]


class TestPhiHat:
    @pytest.mark.parametrize("metric", METRICS)
    def test_identity_at_phi_k(self, metric):
        p = problem(metric)
        np.testing.assert_array_equal(phi_hat(p, p.phi_k), p.phi_k)

    @pytest.mark.parametrize("metric", METRICS)
    def test_orthogonal_increment(self, metric):
        p = problem(metric)
        d = nearby(p, 1) - p.phi_k
        d = d - Metric(metric, p.grid).inner(p.v, d) / Metric(metric, p.grid).inner(p.v, p.v) * p.v
        assert np.max(np.abs(phi_hat(p, p.phi_k + d) - p.phi_k)) <= 1e-12

    @pytest.mark.parametrize("metric", METRICS)
    @pytest.mark.parametrize("bc", ["neumann", "periodic"])
    def test_matches_dense_tensor(self, metric, bc):
        p = problem(metric, bc)
        f = nearby(p, 2)
        W = np.diag(p.grid.weights.ravel())
        gram = W if metric == "l2" else W @ dense_inv_neg_laplacian(p.grid)
        v = p.v.ravel()
        oracle = p.phi_k.ravel() + np.outer(v, v) @ gram @ (f - p.phi_k).ravel()
        assert rel_err(phi_hat(p, f).ravel(), oracle) <= 1e-12


class TestAuxValue:
    @pytest.mark.parametrize("alpha,beta", BRANCHES)
    def test_value_at_phi_k(self, alpha, beta):
        p = problem(alpha=alpha, beta=beta)
        F = p.model.energy(p.grid, p.phi_k)
        assert aux_value(p, p.phi_k) == pytest.approx((1 - beta) * F, rel=1e-12)

    def test_default_form(self):
        p = problem()
        f = nearby(p, 3)
        F = p.model.energy
        assert aux_value(p, f) == pytest.approx(F(p.grid, f) - 2 * F(p.grid, phi_hat(p, f)), rel=1e-12)

    def test_needs_alpha_plus_beta_above_one(self):
        p = problem()
        with pytest.raises(ValueError):
            AuxProblem(p.model, p.grid, p.phi_k, p.v, p.metric, 0.0, 1.0)

    @pytest.mark.parametrize("metric", METRICS)
    @pytest.mark.parametrize("alpha,beta", BRANCHES)
    def test_gradient_matches_central_differences(self, metric, alpha, beta):
        p = problem(metric, alpha=alpha, beta=beta)
        eps = 1e-5
        for seed in range(5):
            f = nearby(p, seed)
            psi = nearby(p, 50 + seed) - p.phi_k
            fd = (aux_value(p, f + eps * psi) - aux_value(p, f - eps * psi)) / (2 * eps)
            exact = l2_inner(p.grid, aux_gradient_l2(p, f), psi)
            assert abs(fd - exact) <= 1e-6 * abs(exact)

    def test_hm1_flow_is_mass_free(self):
        p = problem("hminus1", "neumann")
        for seed in range(5):
            g = aux_gradient(p, nearby(p, seed))
            assert abs(mass(p.grid, g)) <= 1e-12 * max(1.0, float(np.max(np.abs(g))))

    def test_gradient_vanishes_at_saddle(self):
        model = GinzburgLandau1D(kappa=0.1)
        grid = Grid.line(64, 1.0, "neumann")
        (x,) = grid.coords
        res = run_imf(model, grid, np.cos(np.pi * x), IMFOptions(dt=1.0, stop=InnerStop(tolerance=1e-13), outer_tolerance=1e-11))
        v = min_mode(model, grid, res.phi).vector
        p = AuxProblem(model, grid, res.phi, v, Metric("l2", grid))
        assert aux_gradient_norm(p, res.phi) <= 1e-10


class TestSplits:
    @pytest.mark.parametrize("metric", METRICS)
    @pytest.mark.parametrize("alpha,beta", [(0.0, 2.0), (0.5, 1.5), (1.0, 1.0)])
    def test_dual_split_identity(self, metric, alpha, beta):
        p = problem(metric, alpha=alpha, beta=beta)
        s = build_aux_split(p, p.model.split(LINEAR_CONTRACTIVE), p.model.split(NONLINEAR_CONTRACTIVE))
        for seed in range(5):
            f = nearby(p, seed)
            L = aux_value(p, f)
            assert abs(s.contractive.value(f) - s.expansive.value(f) - L) <= 1e-12 * max(abs(L), 1.0)
            assert rel_err(s.contractive.gradient(f) - s.expansive.gradient(f), aux_gradient_l2(p, f)) <= 1e-12

    def test_dual_split_contractive_gradient_is_affine(self):
        p = problem()
        s = build_aux_split(p, p.model.split(LINEAR_CONTRACTIVE), p.model.split(NONLINEAR_CONTRACTIVE))
        a, b = nearby(p, 1), nearby(p, 2)
        g = s.contractive.gradient
        assert rel_err(g(0.3 * a + 0.7 * b), 0.3 * g(a) + 0.7 * g(b)) <= 1e-12

    def test_dual_split_rejects_negative_weights(self):
        p = problem(alpha=2.0, beta=-0.5)
        with pytest.raises(ValueError):
            build_aux_split(p, p.model.split(LINEAR_CONTRACTIVE), p.model.split(NONLINEAR_CONTRACTIVE))

    @pytest.mark.parametrize("alpha,beta", BRANCHES)
    def test_branch_split_identity(self, alpha, beta):
        p = problem(alpha=alpha, beta=beta)
        s = branch_split(p, p.model.split(LINEAR_CONTRACTIVE))
        f = nearby(p, 4)
        L = aux_value(p, f)
        assert abs(s.contractive.value(f) - s.expansive.value(f) - L) <= 1e-12 * max(abs(L), 1.0)
        assert rel_err(s.contractive.gradient(f) - s.expansive.gradient(f), aux_gradient_l2(p, f)) <= 1e-12

    @pytest.mark.parametrize("metric", METRICS)
    @pytest.mark.parametrize("alpha,beta", [(0.5, 1.5), (2.0, -0.5), (-0.5, 2.0)])
    def test_convexity_sampling_three_branches(self, metric, alpha, beta):
        p = problem(metric, alpha=alpha, beta=beta)
        pair = p.model.split(LINEAR_CONTRACTIVE)
        s = branch_split(p, pair)
        f = nearby(p, 5)
        lo, hi = pair.convex_range
        for arg in (f, phi_hat(p, f), f - (phi_hat(p, f) - p.phi_k)):
            assert lo <= arg.min() and arg.max() <= hi
        rng = np.random.default_rng(6)
        for _ in range(100):
            psi = rng.standard_normal(p.grid.shape)
            scale = l2_inner(p.grid, psi, psi)
            for part in (s.contractive, s.expansive):
                assert l2_inner(p.grid, psi, part.hessian(f, psi)) >= -1e-10 * scale

    @pytest.mark.parametrize("metric", METRICS)
    def test_convexity_sampling_dual_split(self, metric):
        p = problem(metric)
        s = build_aux_split(p, p.model.split(LINEAR_CONTRACTIVE), p.model.split(NONLINEAR_CONTRACTIVE))
        f = nearby(p, 6)
        rng = np.random.default_rng(7)
        for _ in range(100):
            psi = rng.standard_normal(p.grid.shape)
            scale = l2_inner(p.grid, psi, psi)
            for part in (s.contractive, s.expansive):
                assert l2_inner(p.grid, psi, part.hessian(f, psi)) >= -1e-10 * scale


def lemma_gap(p, s, a, b) -> float:
    """``<dLc(a) - dLe(b), a - b> - (L(a) - L(b))``; never below zero for a convex splitting."""
    lhs = aux_value(p, a) - aux_value(p, b)
    rhs = l2_inner(p.grid, s.contractive.gradient(a) - s.expansive.gradient(b), a - b)
    return rhs - lhs


@pytest.mark.parametrize("metric", METRICS)
def test_lemma_inequality_on_random_pairs(metric):
    p = problem(metric, "periodic")
    s = build_aux_split(p, p.model.split(LINEAR_CONTRACTIVE), p.model.split(NONLINEAR_CONTRACTIVE))
    for k in range(50):
        a, b = nearby(p, 2 * k, 0.3), nearby(p, 2 * k + 1, 0.3)
        assert lemma_gap(p, s, a, b) >= -1e-10


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), amp=st.floats(0.01, 0.3))
def test_lemma_inequality_property(seed, amp):
    p = problem("l2", "periodic")
    s = build_aux_split(p, p.model.split(LINEAR_CONTRACTIVE), p.model.split(NONLINEAR_CONTRACTIVE))
    assert lemma_gap(p, s, nearby(p, seed, amp), nearby(p, seed + 1, amp)) >= -1e-10


# -- cycles on the Allen-Cahn benchmark -------------------------------------------


@pytest.fixture(scope="module")
def ac_first_cycle():
    model = GinzburgLandau1D(kappa=0.01)
    grid = Grid.line(200, 1.0, "neumann")
    (x,) = grid.coords
    phi0 = np.cos(np.pi * x)
    pair = min_mode(model, grid, phi0)
    return AuxProblem(model, grid, phi0, pair.vector, Metric("l2", grid)), pair.value


def table_cell(table, scheme, dt, column):
    t = reference_data()["tables"][table]
    return t[scheme][t["dts"].index(dt)][t["columns"].index(column)]


class TestRunCycle:
    def test_tolerance_count(self, ac_first_cycle):
        p, lam = ac_first_cycle
        _, rep = run_cycle(p, make_stepper(StepperConfig(10.0), p), InnerStop(tolerance=1e-8), lambda_min=lam)
        assert rep.reason == "tolerance"
        assert abs(rep.iterations - table_cell("T1a", "cs", 10.0, 1e-8)) <= 5
        assert rep.aux_grad_norm <= 1e-8

    def test_count_is_first_crossing(self, ac_first_cycle):
        p, _ = ac_first_cycle
        rows = []
        _, rep = run_cycle(p, make_stepper(StepperConfig(1.0), p), InnerStop(tolerance=1e-6), trace=lambda *r: rows.append(r))
        norms = [r[3] for r in rows]
        assert len(rows) == rep.iterations + 1
        assert norms[-1] <= 1e-6 and all(e > 1e-6 for e in norms[:-1])

    def test_already_converged_takes_no_steps(self, ac_first_cycle):
        p, _ = ac_first_cycle
        _, rep = run_cycle(p, make_stepper(StepperConfig(1.0), p), InnerStop(tolerance=1e3))
        assert rep.iterations == 0

    def test_cap(self, ac_first_cycle):
        p, _ = ac_first_cycle
        _, rep = run_cycle(p, make_stepper(StepperConfig(1.0), p), InnerStop(cap=7))
        assert rep.iterations == 7 and rep.reason == "iteration-cap"

    def test_ncs_large_step_is_reported_as_divergence(self, ac_first_cycle):
        p, _ = ac_first_cycle
        phi, rep = run_cycle(p, make_stepper(StepperConfig(5.0, "ncs"), p), InnerStop(tolerance=1e-8))
        assert rep.diverged
        assert table_cell("T1a", "ncs", 5.0, 1e-8) == "diverged"
        assert math.isinf(rep.force_norm)

    def test_cs_is_monotone_along_the_run(self, ac_first_cycle):
        p, _ = ac_first_cycle
        for dt in (0.01, 0.1, 5.0, 10.0):
            values = []
            run_cycle(p, make_stepper(StepperConfig(dt), p), InnerStop(cap=200), trace=lambda c, n, L, *rest: values.append(L))
            assert all(b <= a + 1e-10 * abs(a) for a, b in zip(values, values[1:]))

    def test_stop_needs_a_criterion(self):
        with pytest.raises(ValueError):
            InnerStop()


class TestRunIMF:
    def test_single_capped_cycle(self):
        grid = Grid.line(200, 1.0, "neumann")
        (x,) = grid.coords
        res = run_imf(GinzburgLandau1D(kappa=0.01), grid, np.cos(np.pi * x), IMFOptions(dt=5.0, stop=InnerStop(cap=50)))
        assert res.converged
        assert res.cycles == table_cell("T2a", "cs", 5.0, 50)
        assert res.errors[-1] <= 1e-8
        assert len(res.errors) == res.cycles + 1

    def test_mass_is_conserved_across_cycles(self):
        model = GinzburgLandau1D(kappa=0.04)
        grid = Grid.line(200, 1.0, "neumann")
        metric = Metric("hminus1", grid)
        phi = make_initial(CH_NEUMANN_INIT, grid)
        m0 = mass(grid, phi)
        drift = []
        for k in range(6):
            p = AuxProblem(model, grid, phi, min_mode(model, grid, phi, EigOptions(metric="hminus1")).vector, metric)
            step = make_stepper(StepperConfig(0.1, "cs", "ch_hm1"), p)

            def tracked(f, step=step):
                out = step(f)
                drift.append(abs(mass(grid, out) - m0))
                return out

            phi, rep = run_cycle(p, tracked, InnerStop(cap=50), cycle=k)
        assert len(drift) == 300
        assert max(drift) <= 1e-10

    def test_guard_caps_first_cycle_when_stable(self):
        # from the stable state +1 the lowest eigenvalue is positive
        grid = Grid.line(100, 1.0, "neumann")
        (x,) = grid.coords
        phi0 = 1.0 - 0.05 * np.cos(np.pi * x)
        res = run_imf(GinzburgLandau1D(kappa=0.05), grid, phi0, IMFOptions(dt=0.1, guard_cap=13, max_cycles=1))
        assert res.reports[0].lambda_min >= 0
        assert res.reports[0].iterations == 13

    def test_errors_are_force_norms(self):
        model = GinzburgLandau1D(kappa=0.01)
        grid = Grid.line(200, 1.0, "neumann")
        (x,) = grid.coords
        phi0 = np.cos(np.pi * x)
        res = run_imf(model, grid, phi0, IMFOptions(dt=5.0, stop=InnerStop(cap=10), max_cycles=2))
        assert res.errors[0] == force_norm(model, Metric("l2", grid), phi0)

    def test_rejects_non_finite_start(self):
        grid = Grid.line(20, 1.0, "neumann")
        with pytest.raises(ValueError):
            run_imf(GinzburgLandau1D(), grid, np.full(grid.shape, np.nan))

    def test_deterministic(self):
        grid = Grid.line(200, 1.0, "periodic")
        (x,) = grid.coords
        opts = IMFOptions(dt=1.0, stop=InnerStop(cap=30), max_cycles=3)
        runs = []
        for _ in range(2):
            rows = []
            run_imf(GinzburgLandau1D(kappa=0.01), grid, np.sin(2 * np.pi * x), opts, trace=lambda *r: rows.append(r))
            runs.append(rows)
        assert runs[0] == runs[1]
