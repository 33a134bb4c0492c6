import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import geomflow as gf
from geomflow.errors import ConfigError
from geomflow.fields import map_initial_geometry
from geomflow.residual import FlowSpec, SlabState
from geomflow.solver import (
    CHECKPOINT_HEADER,
    NewtonConfig,
    march,
    read_checkpoint,
    write_checkpoint,
)


def circle_spec(flow="mcf", k=1, s=1, tau=5e-3, T=2e-2):
    return FlowSpec(flow=flow, degree=k, stages=s, timestep=tau, final_time=T)


def test_newton_config_validation():
    with pytest.raises(ConfigError):
        NewtonConfig(abs_tol=0.0)
    with pytest.raises(ConfigError):
        NewtonConfig(rel_tol=-1e-10)
    with pytest.raises(ConfigError):
        NewtonConfig(max_iterations=0)
    with pytest.raises(ConfigError):
        NewtonConfig(backtrack_factor=1.0)


def test_timestep_must_divide_final_time(circle16):
    X0 = map_initial_geometry(circle16, "sphere", 1)
    with pytest.raises(ConfigError):
        march(circle_spec(tau=3e-3, T=1e-2), X0)


def test_march_is_deterministic(circle16):
    X0 = map_initial_geometry(circle16, "sphere", 1)
    spec = circle_spec()
    a = march(spec, X0)
    b = march(spec, X0)
    assert a.termination == b.termination == "reached_T"
    assert np.array_equal(a.final_state.Xc, b.final_state.Xc)
    for ra, rb in zip(a.entries, b.entries):
        assert ra == rb


def test_ledger_structure_under_mcf(circle16):
    X0 = map_initial_geometry(circle16, "sphere", 1)
    rec = march(circle_spec(), X0)
    ts = [r.t for r in rec.entries]
    assert ts[0] == 0.0 and np.allclose(np.diff(ts), 5e-3)
    S = [r.S for r in rec.entries]
    assert all(b < a for a, b in zip(S, S[1:]))  # area strictly dissipates
    assert all(r.rh >= 1.0 for r in rec.entries)
    assert rec.entries[0].newton_its == 0


def test_blowup_is_recorded_not_raised(circle16):
    # the circle vanishes at t = 0.5; marching past extinction must
    # terminate cleanly with a recorded failure mode
    X0 = map_initial_geometry(circle16, "sphere", 1)
    rec = march(circle_spec(tau=2e-2, T=0.6), X0)
    assert rec.termination in ("newton_failure", "degenerate_geometry")
    assert rec.failure_message
    assert 0 < rec.final_time < 0.6
    assert len(rec.entries) == rec.slabs_accepted + 1


def test_checkpoint_roundtrip_is_exact(circle16, rng):
    X0 = map_initial_geometry(circle16, "sphere", 2)
    state = SlabState.initial_guess(X0, 2, 0.125, 1e-3)
    u = state.unknowns()
    state = state.with_unknowns(u + 0.01 * rng.standard_normal(u.shape))
    import io, os, tempfile

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "x.ckpt")
        write_checkpoint(path, state, 17, "deadbeefcafe0123")
        with open(path) as f:
            assert f.readline().strip() == CHECKPOINT_HEADER
        back, slab, chash = read_checkpoint(path, circle16)
    assert slab == 17 and chash == "deadbeefcafe0123"
    assert back.t_start == state.t_start and back.dt == state.dt
    for a, b in (
        (back.Xc, state.Xc), (back.pc, state.pc), (back.Rc, state.Rc), (back.kc, state.kc),
    ):
        assert np.array_equal(a, b)  # hex floats are bit-exact


def test_restart_matches_uninterrupted_run(circle16, tmp_path):
    X0 = map_initial_geometry(circle16, "sphere", 1)
    spec = circle_spec(tau=5e-3, T=3e-2)
    full = march(spec, X0)

    ckpt = tmp_path / "mid.ckpt"
    part = march(spec, X0, checkpoint_interval=3, checkpoint_path=ckpt)
    state, slab, _ = read_checkpoint(ckpt, circle16)
    assert slab in (2, 5)

    resumed = march(spec, X0, start_slab=slab + 1, start_state=state)
    assert resumed.termination == "reached_T"
    err = np.abs(resumed.final_state.end_field().dofs - full.final_state.end_field().dofs).max()
    assert err <= 1e-13


def test_fd_jacobian_newton_agrees(ico0):
    # the dense finite-difference oracle drives Newton to the same answer
    X0 = map_initial_geometry(ico0, "sphere", 1)
    spec = FlowSpec(flow="mcf", degree=1, stages=1, timestep=1e-3, final_time=1e-3)
    exact = march(spec, X0)
    fd = march(spec, X0, newton=NewtonConfig(fd_jacobian=True))
    err = np.abs(exact.final_state.end_field().dofs - fd.final_state.end_field().dofs).max()
    assert err < 1e-9


@settings(max_examples=10, deadline=None)
@given(st.lists(st.floats(-1e300, 1e300, allow_nan=False, width=64), min_size=1, max_size=40))
def test_hex_array_roundtrip(values):
    from geomflow.solver import _read_array, _write_array
    import io

    arr = np.array(values)
    buf = io.StringIO()
    _write_array(buf, "u", arr)
    lines = buf.getvalue().splitlines()
    name, back, _ = _read_array(lines, 0)
    assert name == "u"
    assert np.array_equal(back, arr)
