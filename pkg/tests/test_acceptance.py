"""Acceptance criteria, one test each, at their stated tolerances.

Every test records a single pass/fail line that is printed in the pytest
terminal summary under "acceptance criteria".
"""

from __future__ import annotations

import subprocess
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from saddlesplit.energy import GinzburgLandau1D, LandauBrazovskii2D, energy
from saddlesplit.experiments import (
    CH_NEUMANN_INIT,
    CH_PERIODIC_INIT,
    LB_MIX,
    TABLE_IDS,
    fit_order,
    lb_grid,
    lb_stable_state,
    reference_data,
    reproduce_table,
    run_experiment,
    summarize,
)
from saddlesplit.config import load_config
from saddlesplit.fields import Grid
from saddlesplit.imf import IMFOptions, InnerStop, run_imf
from saddlesplit.initial import InitialCondition, make_initial
from saddlesplit.minmode import spectrum_head

from conftest import ACCEPTANCE

HERE = Path(__file__).resolve().parent
CONFIGS = HERE.parent / "configs"
REF = reference_data()["values"]

# the unperturbed Neumann start diverges under the precise settings below
# (the auxiliary functional is unbounded along the min-mode far from the saddle);
# a small seeded perturbation keeps it in the basin
CH_NEUMANN_START = replace(CH_NEUMANN_INIT, perturbation=0.05, seed=1)

# high-precision IMF used for the saddle energies and the convergence-order fits
PRECISE = dict(scheme="cs", dt=0.1, stop=InnerStop(tolerance=1e-10, max_iterations=20000), outer_tolerance=1e-10, max_cycles=30)


def record(label: str, checks: list[tuple[bool, str]]) -> None:
    ok = all(c for c, _ in checks)
    ACCEPTANCE.append((label, ok, "; ".join(d for _, d in checks)))
    print(f"{'PASS' if ok else 'FAIL'}  {label}")
    assert ok, "; ".join(d for c, d in checks if not c)


def near(measured: float, ref: float, tol: float, name: str) -> tuple[bool, str]:
    ok = bool(np.isfinite(measured) and abs(measured - ref) <= tol)
    return ok, f"{name} {measured:.6g} (ref {ref:g} +/- {tol:g})"


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def ch_saddle(bc: str, ic: InitialCondition):
    grid = Grid.line(200, 1.0, bc)
    model = GinzburgLandau1D(kappa=0.04)
    res = run_imf(model, grid, make_initial(ic, grid), IMFOptions(metric="hminus1", **PRECISE))
    return model, grid, res


def test_criterion_1_ac_saddle_energies(tmp_path):
    base = load_config(CONFIGS / "ac_neumann_saddle.cfg")
    cases = [
        ("cos_pi_x", "neumann", "ac_saddle_cos_pi_x"),
        ("cos_2pi_x", "neumann", "ac_saddle_cos_2pi_x"),
        ("sin_2pi_x", "periodic", "ac_saddle_sin_2pi_x"),
    ]
    checks = []
    for kind, bc, key in cases:
        spec = replace(base, init=InitialCondition(kind), bc=bc)
        res = run_experiment(spec, tmp_path / kind)
        ok, detail = near(res.energy, REF[key]["value"], REF[key]["tolerance"], f"{kind}/{bc} F")
        checks.append((ok and res.converged, detail))
    record("1 AC saddle energies", checks)


def test_criterion_2_ch_constant_state():
    grid = Grid.line(200, 1.0, "neumann")
    f = energy(GinzburgLandau1D(kappa=0.04), grid, np.full(grid.shape, 0.6))
    analytic = (0.6**2 - 1) ** 2 / 4
    ref = REF["ch_constant_state"]
    checks = [
        (abs(f - analytic) <= 1e-10, f"F {f:.12g} vs f(0.6) {analytic:.12g}"),
        near(f, ref["value"], ref["tolerance"], "F vs reported"),
    ]
    record("2 CH constant-state energy", checks)


def test_criterion_3_ch_saddles():
    checks = []
    for bc, ic, key in [("neumann", CH_NEUMANN_START, "ch_saddle_neumann"), ("periodic", CH_PERIODIC_INIT, "ch_saddle_periodic")]:
        model, grid, res = ch_saddle(bc, ic)
        ref = REF[key]
        checks.append((res.converged, f"{bc} converged={res.converged} in {res.cycles} cycles"))
        checks.append(near(energy(model, grid, res.phi), ref["value"], ref["tolerance"], f"{bc} F"))
        lam = spectrum_head(model, grid, res.phi, 3, "hminus1")
        for i, (got, want) in enumerate(zip(lam, ref["lambda_head"]), start=1):
            if bc == "periodic" and i == 2:
                tol = ref["zero_mode_tolerance"]
                checks.append((abs(got) <= tol, f"{bc} |lambda2| {abs(got):.2e} (<= {tol:g})"))
            else:
                checks.append(near(got, want, ref["lambda_tolerance"], f"{bc} lambda{i}"))
    record("3 CH saddles", checks)


@pytest.mark.slow
def test_criterion_4_lb_stationary_states():
    model, grid = LandauBrazovskii2D(), lb_grid()
    lam = lb_stable_state("lamellar")
    cyl = lb_stable_state("cylinder")
    mix = (1 - LB_MIX) * lam.phi + LB_MIX * cyl.phi
    opts = IMFOptions(metric="hminus1", scheme="cs", dt=10.0, stop=InnerStop(cap=1000), outer_tolerance=1e-6, max_cycles=60)
    sad = run_imf(model, grid, mix, opts)
    checks = [
        near(lam.energy, REF["lb_lamellar"]["value"], REF["lb_lamellar"]["tolerance"], "lamellar F"),
        (sad.converged, f"saddle converged={sad.converged} in {sad.cycles} cycles"),
        near(energy(model, grid, sad.phi), REF["lb_saddle"]["value"], REF["lb_saddle"]["tolerance"], "saddle F"),
        (abs(sad.lambda_min) <= REF["lb_saddle"]["lambda_min_magnitude"], f"saddle |lambda_min| {abs(sad.lambda_min):.3g} (<= 1e-4)"),
        near(cyl.energy, REF["lb_cylinder"]["value"], REF["lb_cylinder"]["tolerance"], "cylinder F"),
    ]
    record("4 LB stationary energies", checks)


@pytest.mark.slow
def test_criterion_5_tables(tmp_path):
    cells = []
    per_table = []
    for tid in TABLE_IDS:
        got = reproduce_table(tid, tmp_path)
        s = summarize(got)
        per_table.append(f"{tid} {s['pass']}/{s['soft']}/{s['fail']}")
        cells.extend(got)
    total = summarize(cells)
    n = len(cells)
    checks = [
        (total["fail"] == 0, f"fail {total['fail']}/{n}"),
        (total["soft"] <= 0.10 * n, f"soft {total['soft']}/{n} (<= 10%)"),
        (True, "pass/soft/fail " + ", ".join(per_table)),
    ]
    record("5 table reproduction", checks)


def test_criterion_6_quadratic_convergence():
    checks = []
    for kind, bc in [("cos_pi_x", "neumann"), ("sin_2pi_x", "periodic")]:
        grid = Grid.line(200, 1.0, bc)
        res = run_imf(GinzburgLandau1D(kappa=0.01), grid, make_initial(InitialCondition(kind), grid), IMFOptions(metric="l2", **PRECISE))
        checks.append(order_check(f"AC {bc}", res.errors))
    for bc, ic in [("neumann", CH_NEUMANN_START), ("periodic", CH_PERIODIC_INIT)]:
        _, _, res = ch_saddle(bc, ic)
        checks.append(order_check(f"CH {bc}", res.errors))
    record("6 quadratic convergence", checks)


def order_check(name: str, errors: list[float]) -> tuple[bool, str]:
    series = ", ".join(f"{e:.1e}" for e in errors)
    try:
        p = fit_order(errors)
    except ValueError:
        return False, f"{name} order not measurable, errors [{series}]"
    return p >= 1.7, f"{name} order {p:.2f} (>= 1.7)"


def test_criterion_7_property_suites():
    suites = ["test_fields.py", "test_energy.py", "test_minmode.py", "test_schemes.py", "test_imf.py", "test_harness.py"]
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *suites],
        cwd=HERE,
        capture_output=True,
        text=True,
    )
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()[-200:]
    record("7 property suites", [(proc.returncode == 0, tail)])
