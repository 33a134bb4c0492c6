"""Slab Newton solver, slab marching, blowup detection, checkpointing."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .diagnostics import LedgerRow, ledger_entry, reference_rule
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    NewtonFailure,
    SingularMatrixError,
)
from .fields import SpaceField
from .geometry import area, volume
from .residual import FlowSpec, SlabAssembler, SlabState, curvature_lift, fd_jacobian

CHECKPOINT_HEADER = "GEOMFLOW-CKPT v1"


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-11
    rel_tol: float = 1e-10
    max_iterations: int = 25
    backtrack_factor: float = 0.5
    max_backtracks: int = 8
    fd_jacobian: bool = False   # dense finite-difference oracle, small meshes only

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ConfigError("Newton tolerances must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not 0 < self.backtrack_factor < 1:
            raise ConfigError("backtrack_factor must lie in (0, 1)")


@dataclass
class RunRecord:
    """Outcome of a march: ledger rows per accepted slab plus termination."""

    entries: list = field(default_factory=list)  # LedgerRow, first row at t=0
    termination: str = "reached_T"               # reached_T | newton_failure | degenerate_geometry
    final_time: float = 0.0
    slabs_accepted: int = 0
    final_state: SlabState | None = None
    failure_message: str = ""


def linear_solve(A, b) -> np.ndarray:
    """Sparse direct solve; raises SingularMatrixError on factorization failure."""
    try:
        lu = spla.splu(A.tocsc())
        x = lu.solve(b)
    except RuntimeError as exc:
        raise SingularMatrixError(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("factorization produced non-finite solution")
    return x


def solve_slab(
    incoming: SpaceField,
    spec: FlowSpec,
    guess: SlabState | None = None,
    t_start: float = 0.0,
    newton: NewtonConfig | None = None,
    assembler: SlabAssembler | None = None,
    prev: SlabState | None = None,
    slab: int | None = None,
) -> tuple[SlabState, int]:
    """Newton-solve one slab; returns the converged state and iteration count."""
    newton = newton or NewtonConfig()
    if assembler is None:
        assembler = SlabAssembler(incoming.mesh, spec)
    if guess is None:
        lift = curvature_lift(incoming, spec) if prev is None else None
        guess = SlabState.initial_guess(
            incoming, spec.stages, t_start, spec.timestep, prev, lift=lift
        )
    state = guess

    try:
        res, _ = assembler.assemble(state, want_jacobian=False, slab=slab)
    except DegenerateGeometryError:
        if prev is None:
            raise
        # extrapolated predictor left the admissible set; restart from a
        # constant-in-time guess
        state = SlabState.initial_guess(
            incoming, spec.stages, t_start, spec.timestep, prev, extrapolate=False
        )
        res, _ = assembler.assemble(state, want_jacobian=False, slab=slab)
    norm = float(np.linalg.norm(res))
    tol = max(newton.abs_tol, newton.rel_tol * norm)

    for it in range(1, newton.max_iterations + 1):
        if norm <= tol:
            return state, it - 1
        _, jac = _assemble(assembler, state, newton, slab)
        du = -linear_solve(jac, res)
        u = state.unknowns()
        alpha = 1.0
        for _ in range(newton.max_backtracks + 1):
            try:
                trial = state.with_unknowns(u + alpha * du)
                res_t, _ = assembler.assemble(trial, want_jacobian=False, slab=slab)
            except DegenerateGeometryError:
                alpha *= newton.backtrack_factor
                continue
            norm_t = float(np.linalg.norm(res_t))
            if norm_t < norm or norm_t <= tol:
                state, res, norm = trial, res_t, norm_t
                break
            alpha *= newton.backtrack_factor
        else:
            raise NewtonFailure(
                f"line search stalled at slab t={t_start:.6g}, residual {norm:.3e}"
            )
    if norm <= tol:
        return state, newton.max_iterations
    raise NewtonFailure(
        f"no convergence in {newton.max_iterations} iterations at t={t_start:.6g}, "
        f"residual {norm:.3e} (tolerance {tol:.3e})"
    )


def _assemble(assembler, state, newton, slab):
    if newton.fd_jacobian:
        res, _ = assembler.assemble(state, want_jacobian=False, slab=slab)
        import scipy.sparse as sp

        return res, sp.csc_matrix(fd_jacobian(assembler, state))
    return assembler.assemble(state, want_jacobian=True, slab=slab)


def march(
    spec: FlowSpec,
    X0: SpaceField,
    newton: NewtonConfig | None = None,
    start_slab: int = 0,
    start_state: SlabState | None = None,
    on_slab=None,
    checkpoint_interval: int = 0,
    checkpoint_path=None,
    config_hash: str = "",
) -> RunRecord:
    """Advance slab by slab until the final time or blowup.

    Newton failure and degenerate geometry are recorded outcomes, not
    exceptions; the fixed timestep must divide the final time.  ``on_slab``
    is called with (slab_index, LedgerRow, SlabState) after each accepted
    slab.  When resuming, ``start_state`` is the last accepted slab and
    ``X0`` must be rebuilt from the same configuration.
    """
    newton = newton or NewtonConfig()
    tau, T = spec.timestep, spec.final_time
    nslabs = int(round(T / tau))
    if nslabs < 1 or abs(nslabs * tau - T) > 1e-9 * T:
        raise ConfigError("timestep must divide final_time with at least one slab")

    assembler = SlabAssembler(X0.mesh, spec)
    rule = reference_rule(X0.mesh.dim)
    S0 = area(X0, rule)
    V0 = volume(X0, rule)

    record = RunRecord()
    if start_state is None:
        incoming = X0
        prev = None
        record.entries.append(
            LedgerRow(0.0, S0, 1.0, V0, 0.0, 1.0, 0.0, 0.0, 0)
        )
    else:
        incoming = start_state.end_field()
        prev = start_state
        record.final_state = start_state

    t = start_slab * tau
    record.final_time = t
    for n in range(start_slab, nslabs):
        try:
            state, its = solve_slab(
                incoming, spec, t_start=t, newton=newton,
                assembler=assembler, prev=prev, slab=n,
            )
        except (NewtonFailure, SingularMatrixError) as exc:
            record.termination = "newton_failure"
            record.failure_message = str(exc)
            break
        except DegenerateGeometryError as exc:
            record.termination = "degenerate_geometry"
            record.failure_message = str(exc)
            break
        t = (n + 1) * tau
        row = ledger_entry(assembler, state, its, S0=S0, V0=V0, X0=X0, slab=n)
        record.entries.append(row)
        record.final_state = state
        record.final_time = t
        record.slabs_accepted += 1
        incoming, prev = state.end_field(), state
        if on_slab is not None:
            on_slab(n, row, state)
        if checkpoint_interval and checkpoint_path and (n + 1) % checkpoint_interval == 0:
            write_checkpoint(checkpoint_path, state, n, config_hash)
    return record


# -- checkpoint I/O ------------------------------------------------------------


def _write_array(f, name, arr):
    dims = " ".join(str(n) for n in arr.shape)
    f.write(f"array {name} {arr.ndim} {dims}\n")
    flat = arr.ravel()
    for i in range(0, len(flat), 8):
        f.write(" ".join(float.hex(float(v)) for v in flat[i : i + 8]) + "\n")


def _read_array(lines, i):
    parts = lines[i].split()
    if parts[0] != "array":
        raise ConfigError(f"malformed checkpoint: expected array record, got {lines[i]!r}")
    name = parts[1]
    ndim = int(parts[2])
    shape = tuple(int(x) for x in parts[3 : 3 + ndim])
    count = int(np.prod(shape))
    vals = []
    i += 1
    while len(vals) < count:
        vals.extend(float.fromhex(tok) for tok in lines[i].split())
        i += 1
    return name, np.array(vals).reshape(shape), i


def write_checkpoint(path, state: SlabState, slab: int, config_hash: str = "") -> None:
    """Versioned text checkpoint; hex floats round-trip exactly."""
    with open(path, "w") as f:
        f.write(CHECKPOINT_HEADER + "\n")
        f.write(f"hash {config_hash}\n")
        f.write(f"slab {slab}\n")
        f.write(f"t_start {float.hex(state.t_start)}\n")
        f.write(f"dt {float.hex(state.dt)}\n")
        f.write(f"degree {state.degree}\n")
        f.write(f"stages {state.stages}\n")
        for name, arr in (("Xc", state.Xc), ("pc", state.pc), ("Rc", state.Rc), ("kc", state.kc)):
            _write_array(f, name, arr)


def read_checkpoint(path, mesh) -> tuple[SlabState, int, str]:
    """Restore (state, slab index, config hash); mesh comes from the config."""
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise ConfigError(f"not a checkpoint file: {path}")
    header = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("array"):
        key, _, val = lines[i].partition(" ")
        header[key] = val
        i += 1
    arrays = {}
    while i < len(lines) and lines[i].strip():
        name, arr, i = _read_array(lines, i)
        arrays[name] = arr
    state = SlabState(
        mesh,
        int(header["degree"]),
        int(header["stages"]),
        arrays["Xc"],
        arrays["pc"],
        arrays["Rc"],
        arrays["kc"],
        t_start=float.fromhex(header["t_start"]),
        dt=float.fromhex(header["dt"]),
    )
    return state, int(header["slab"]), header.get("hash", "")
