"""Acceptance gate: one pass/fail line per criterion.

Each criterion prints ``ACCEPTANCE <name>: PASS|FAIL`` with the measured
numbers before asserting, so a single run of this module doubles as the
release report.  Long benchmark runs are shared across criteria through
session-scoped fixtures; full-resolution blowup/pinch runs carry the
``nightly`` marker and are excluded from the default suite.
"""

import os

import numpy as np
import pytest

import geomflow as gf
from geomflow.config import load_config
from geomflow.diagnostics import eoc, sphere_error
from geomflow.fields import SpaceField, map_initial_geometry
from geomflow.geometry import area, area_rate, volume, volume_rate
from geomflow.quadrature import simplex_quadrature, time_quadrature
from geomflow.residual import (
    FlowSpec,
    SlabAssembler,
    SlabState,
    assemble_jacobian,
    assemble_residual,
)
from geomflow.timeslab import TimePolyField, intermediate_normal_check, trial_basis
from geomflow.cli import build_mesh, spec_from_config

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


_CAPTURE = None


@pytest.fixture(autouse=True)
def _live_report(capsys):
    # route the ACCEPTANCE lines past output capture so they stay visible
    # in the terminal for passing criteria, not only on failure
    global _CAPTURE
    _CAPTURE = capsys
    yield
    _CAPTURE = None


def report(name, ok, detail=""):
    line = f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}  {detail}"
    if _CAPTURE is not None:
        with _CAPTURE.disabled():
            print(f"\n{line}")
    else:
        print(f"\n{line}")
    assert ok, f"{name}: {detail}"


def run_config(name, timestep=None, final_time=None):
    """March one committed experiment, recording per-slab gradient norms."""
    cfg = load_config(os.path.join(CONFIG_DIR, name))
    spec = spec_from_config(cfg, timestep=timestep)
    if final_time is not None:
        spec = FlowSpec(
            flow=spec.flow, degree=spec.degree, stages=spec.stages,
            timestep=spec.timestep, final_time=final_time,
            geometry=spec.geometry, policy_overrides=spec.policy_overrides,
        )
    mesh = build_mesh(cfg)
    X0 = map_initial_geometry(mesh, cfg["run.geometry"], spec.degree)
    asm = SlabAssembler(mesh, spec)
    norms = []
    record = gf.march(spec, X0, on_slab=lambda n, row, st: norms.append(asm.slab_gradient_norms(st)))
    S0 = record.entries[0].S
    return record, norms, S0


# -- shared benchmark runs -------------------------------------------------------


@pytest.fixture(scope="session")
def sphere_eoc_runs():
    """Criterion 1 marches: three icosphere levels, tau coupled to h^(3/2)."""
    T = 0.05
    out = []
    for r in (1, 2, 3):
        mesh = gf.make_icosphere_mesh(r)
        h = mesh.max_edge_length()
        tau = T / max(1, round(T / (0.04 * h**1.5)))
        X0 = map_initial_geometry(mesh, "sphere", 1)
        spec = FlowSpec(flow="mcf", degree=1, stages=1, timestep=tau, final_time=T)
        asm = SlabAssembler(mesh, spec)
        norms = []
        rec = gf.march(spec, X0, on_slab=lambda n, row, st: norms.append(asm.slab_gradient_norms(st)))
        out.append((h, rec, norms))
    return out


@pytest.fixture(scope="session")
def circle_temporal_runs():
    """Criterion 2 marches: CG(3) circle, s in {1,2,3}, three tau halvings."""
    T = 0.05
    mesh = gf.make_circle_mesh(512)
    X0 = map_initial_geometry(mesh, "sphere", 3)
    out = {}
    for s in (1, 2, 3):
        runs = []
        for nslabs in (2, 4, 8):
            spec = FlowSpec(
                flow="mcf", degree=3, stages=s, timestep=T / nslabs, final_time=T
            )
            asm = SlabAssembler(mesh, spec)
            norms = []
            rec = gf.march(spec, X0, on_slab=lambda n, row, st: norms.append(asm.slab_gradient_norms(st)))
            runs.append((T / nslabs, rec, norms))
        out[s] = runs
    return out


@pytest.fixture(scope="session")
def ellipsoid_run():
    """Criterion 3 march: 200 surface-diffusion slabs of the perturbed ellipsoid."""
    return run_config("sd_ellipsoid_volume.cfg")


@pytest.fixture(scope="session")
def dumbbell_fast_run():
    """Criterion 6 fast variant: coarse-timestep dumbbell blowup."""
    return run_config("mcf_dumbbell_fast.cfg")


@pytest.fixture(scope="session")
def cuboid_smoke_run():
    """Criterion 7 smoke variant: coarse-timestep cuboid pinch."""
    return run_config("sd_cuboid_smoke.cfg")


def all_ledgers(sphere_eoc_runs, circle_temporal_runs, ellipsoid_run, dumbbell_fast_run):
    """(label, record, norms) for every standard-suite benchmark run."""
    runs = [(f"sphere-r{r}", rec, norms)
            for r, (_, rec, norms) in zip((1, 2, 3), sphere_eoc_runs)]
    for s, levels in circle_temporal_runs.items():
        runs += [(f"circle-s{s}-tau{tau:g}", rec, norms) for tau, rec, norms in levels]
    runs.append(("sd-ellipsoid", ellipsoid_run[0], ellipsoid_run[1]))
    runs.append(("mcf-dumbbell-fast", dumbbell_fast_run[0], dumbbell_fast_run[1]))
    return runs


# -- criteria --------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_1_sphere_spatial_eoc(sphere_eoc_runs):
    R_T = np.sqrt(0.8)
    hs, errs = [], []
    for h, rec, _ in sphere_eoc_runs:
        assert rec.termination == "reached_T"
        hs.append(h)
        errs.append(sphere_error(rec.final_state.end_field(), R_T))
    slopes = eoc(errs, hs)
    ok = bool(np.all(np.abs(slopes - 2.0) <= 0.2))
    report(
        "1 sphere-EOC(MCF)", ok,
        "errors=" + np.array2string(np.asarray(errs), precision=3) +
        " slopes=" + np.array2string(slopes, precision=3) + " target 2+-0.2",
    )


@pytest.mark.slow
def test_criterion_2_circle_temporal_eoc(circle_temporal_runs):
    # Gauss-point collocation integrates the circle's quadratic invariant
    # r^2 = 1 - 2t exactly, so the radius error sits at the solver floor for
    # every stage count; the criterion's 1e-11 floor allowance applies.
    FLOOR = 1e-11
    R_T = np.sqrt(1.0 - 2.0 * 0.05)
    lines, ok = [], True
    for s, runs in sorted(circle_temporal_runs.items()):
        taus, errs = [], []
        for tau, rec, _ in runs:
            assert rec.termination == "reached_T"
            dofs = rec.final_state.end_field().dofs
            errs.append(abs(np.linalg.norm(dofs, axis=1).mean() - R_T))
            taus.append(tau)
        pair_ok = []
        for i in range(len(errs) - 1):
            if errs[i] <= FLOOR and errs[i + 1] <= FLOOR:
                pair_ok.append(True)  # both at the floor
            elif errs[i] > 0 and errs[i + 1] > 0:
                slope = np.log(errs[i] / errs[i + 1]) / np.log(taus[i] / taus[i + 1])
                pair_ok.append(abs(slope - 2 * s) <= 0.3)
            else:
                pair_ok.append(True)
        ok &= all(pair_ok)
        lines.append(f"s={s} errors={np.array2string(np.asarray(errs), precision=2)}")
    report("2 circle-temporal-EOC", bool(ok), "; ".join(lines) + f" floor {FLOOR:g}")


@pytest.mark.slow
def test_criterion_3_volume_conservation(ellipsoid_run):
    record, _, _ = ellipsoid_run
    assert record.termination == "reached_T"
    assert record.slabs_accepted == 200
    drift = max(r.dV_rel for r in record.entries)
    ok = drift <= 1e-10
    report("3 SD-volume-conservation", ok, f"max |dV|/V0 = {drift:.3e} <= 1e-10")


@pytest.mark.slow
def test_criterion_4_dissipation_identity(
    sphere_eoc_runs, circle_temporal_runs, ellipsoid_run, dumbbell_fast_run
):
    worst = ("", 0.0)
    mono_ok = diss_ok = True
    for label, rec, _ in all_ledgers(
        sphere_eoc_runs, circle_temporal_runs, ellipsoid_run, dumbbell_fast_run
    ):
        S0 = rec.entries[0].S
        eps_q = 1e-6 * S0
        for prev, row in zip(rec.entries, rec.entries[1:]):
            mono_ok &= row.S <= prev.S + eps_q
            diss_ok &= row.diss_res <= eps_q
            if row.diss_res / S0 > worst[1]:
                worst = (label, row.diss_res / S0)

    # doubling the rule elevation must shrink the dissipation residual >= 10x
    base, _, S0b = run_config("mcf_dissipation_budget.cfg")
    elev, _, _ = run_config("mcf_dissipation_elevated.cfg")
    d_base = sum(r.diss_res for r in base.entries)
    d_elev = sum(r.diss_res for r in elev.entries)
    shrink = d_base / max(d_elev, 1e-300)
    ok = mono_ok and diss_ok and shrink >= 10.0
    report(
        "4 dissipation-identity", bool(ok),
        f"worst |dS+D|/S0 = {worst[1]:.2e} ({worst[0]}), budget 1e-6; "
        f"elevation doubling shrink {shrink:.1f}x >= 10x",
    )


@pytest.mark.slow
def test_criterion_5_orthogonality(
    sphere_eoc_runs, circle_temporal_runs, ellipsoid_run, dumbbell_fast_run
):
    worst = 0.0
    for label, rec, norms in all_ledgers(
        sphere_eoc_runs, circle_temporal_runs, ellipsoid_run, dumbbell_fast_run
    ):
        for row, (nx, nr) in zip(rec.entries[1:], norms):
            rel = row.orth_res / max(1.0, nx * nr)
            worst = max(worst, rel)
    ok = worst <= 1e-9
    report("5 orthogonality-lemma", ok, f"worst normalized |(grad Xdot, grad R)| = {worst:.3e} <= 1e-9")


@pytest.mark.slow
def test_criterion_6_dumbbell_blowup_fast(dumbbell_fast_run):
    record, _, _ = dumbbell_fast_run
    t = record.final_time
    ok = record.termination in ("newton_failure", "degenerate_geometry")
    ok &= 0.085 <= t <= 0.10
    report(
        "6 dumbbell-blowup(fast)", bool(ok),
        f"termination {record.termination} at t = {t:.5f}, window [0.085, 0.10]",
    )


@pytest.mark.nightly
def test_criterion_6_dumbbell_blowup_full():
    record, _, _ = run_config("mcf_dumbbell_blowup.cfg")
    t = record.final_time
    rh = max(r.rh for r in record.entries)
    ok = record.termination in ("newton_failure", "degenerate_geometry")
    ok &= 0.089 <= t <= 0.095 and rh <= 2.5
    report(
        "6 dumbbell-blowup(full)", bool(ok),
        f"termination {record.termination} at t = {t:.5f}, window [0.089, 0.095], "
        f"max rh = {rh:.3f} <= 2.5",
    )


@pytest.mark.slow
def test_criterion_7_cuboid_pinch_smoke(cuboid_smoke_run):
    record, _, _ = cuboid_smoke_run
    t = record.final_time
    ok = record.termination in ("newton_failure", "degenerate_geometry")
    ok &= 0.30 <= t <= 0.40
    report(
        "7 cuboid-pinch(smoke)", bool(ok),
        f"termination {record.termination} at t = {t:.5f}, window [0.30, 0.40]",
    )


@pytest.mark.nightly
def test_criterion_7_cuboid_pinch_full():
    record, _, _ = run_config("sd_cuboid_pinch.cfg")
    t = record.final_time
    drift = max(r.dV_rel for r in record.entries)
    ok = record.termination in ("newton_failure", "degenerate_geometry")
    ok &= 0.33 <= t <= 0.38 and drift <= 1e-10
    report(
        "7 cuboid-pinch(full)", bool(ok),
        f"termination {record.termination} at t = {t:.5f}, window [0.33, 0.38], "
        f"max |dV|/V0 = {drift:.2e} <= 1e-10",
    )


def test_criterion_8_intermediate_normal():
    rng = np.random.default_rng(8)
    mesh = gf.make_icosphere_mesh(0)
    worst = 0.0
    for _ in range(50):
        k = int(rng.integers(1, 3))
        X0 = map_initial_geometry(mesh, "sphere", k)
        tb = trial_basis(1)
        coeffs = np.repeat(X0.dofs[None], 2, axis=0)
        coeffs[1] += 0.1 * rng.standard_normal(coeffs[1].shape)
        X = TimePolyField(tb, coeffs, 0.0, float(rng.uniform(1e-4, 1e-1)))
        y = SpaceField(mesh, k, rng.standard_normal(X0.dofs.shape[0]))
        lhs, rhs = intermediate_normal_check(X, y)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(rhs)))
    ok = worst <= 1e-13
    report("8 intermediate-normal", ok, f"worst |lhs-rhs| = {worst:.3e} <= 1e-13 (50 draws)")


def test_criterion_9_jacobian_directions():
    rng = np.random.default_rng(9)
    mesh = gf.make_icosphere_mesh(0)
    worst = 0.0
    for flow, shape in (("mcf", "dumbbell"), ("sd", "perturbed_ellipsoid")):
        X0 = map_initial_geometry(mesh, shape, 2)
        spec = FlowSpec(flow=flow, degree=2, stages=2, timestep=1e-3, final_time=1e-2)
        state = SlabState.initial_guess(X0, 2, 0.0, spec.timestep)
        u = state.unknowns()
        state = state.with_unknowns(u + 0.02 * rng.standard_normal(u.shape))
        jac = assemble_jacobian(state, spec)
        scale = float(np.abs(state.unknowns()).max())
        h = 1e-7 * max(1.0, scale)
        for _ in range(20):
            v = rng.standard_normal(u.shape)
            v /= np.linalg.norm(v)
            rp = assemble_residual(state.with_unknowns(state.unknowns() + h * v), spec)
            rm = assemble_residual(state.with_unknowns(state.unknowns() - h * v), spec)
            fd = (rp - rm) / (2 * h)
            jv = jac @ v
            worst = max(worst, np.linalg.norm(fd - jv) / max(1.0, np.linalg.norm(jv)))
    ok = worst <= 1e-6
    report("9 jacobian-directions", ok, f"worst relative error {worst:.3e} <= 1e-6 (2x20 directions)")


def test_criterion_10_rate_identities():
    rng = np.random.default_rng(10)
    mesh = gf.make_icosphere_mesh(1)
    X = map_initial_geometry(mesh, "dumbbell", 2)
    # moderate perturbation keeps the central difference in its asymptotic
    # range without touching the round-off floor
    W = SpaceField(mesh, 2, 0.1 * rng.standard_normal(X.dofs.shape))
    rule = simplex_quadrature(2, 8)
    dS = area_rate(X, W, rule)
    dV = volume_rate(X, W, rule)
    steps = [4e-2, 2e-2, 1e-2]
    errs_S, errs_V = [], []
    for h in steps:
        Xp = SpaceField(mesh, 2, X.dofs + h * W.dofs)
        Xm = SpaceField(mesh, 2, X.dofs - h * W.dofs)
        errs_S.append(abs((area(Xp, rule) - area(Xm, rule)) / (2 * h) - dS))
        errs_V.append(abs((volume(Xp, rule) - volume(Xm, rule)) / (2 * h) - dV))
    sS = eoc(errs_S, steps)
    sV = eoc(errs_V, steps)
    ok = bool(np.all(np.abs(sS - 2.0) <= 0.2) and np.all(np.abs(sV - 2.0) <= 0.2))
    report(
        "10 rate-identities", ok,
        "area slopes " + np.array2string(sS, precision=3) +
        ", volume slopes " + np.array2string(sV, precision=3) + ", target 2+-0.2",
    )
