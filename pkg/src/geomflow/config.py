"""Flat key=value run configuration with sections, canonical form and hash."""

import hashlib

from .errors import ConfigError

_BOOLS = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}

#: full schema: section.key -> (type, default).  None defaults are optional keys.
SCHEMA = {
    "run.flow": (str, "mcf"),
    "run.degree": (int, 1),
    "run.stages": (int, 1),
    "run.timestep": (float, 1e-4),
    "run.final_time": (float, 1e-2),
    "run.geometry": (str, "sphere"),
    "run.output_dir": (str, "out"),
    "run.snapshot_interval": (int, 0),
    "run.checkpoint_interval": (int, 0),
    "mesh.kind": (str, "icosphere"),
    "mesh.refinements": (int, 2),
    "mesh.segments": (int, 64),
    "mesh.lx": (float, 1.0),
    "mesh.ly": (float, 1.0),
    "mesh.lz": (float, 1.0),
    "mesh.density": (int, 3),
    "mesh.path": (str, ""),
    "quadrature.time_points": (int, 0),          # 0 = policy default
    "quadrature.elevation_points": (int, 3),
    "quadrature.spatial_degree": (int, 0),       # 0 = policy default
    "quadrature.spatial_elevation": (int, 4),
    "newton.abs_tol": (float, 1e-11),
    "newton.rel_tol": (float, 1e-10),
    "newton.max_iterations": (int, 25),
    "newton.backtrack_factor": (float, 0.5),
    "newton.max_backtracks": (int, 8),
    "newton.fd_jacobian": (bool, False),
    "sweep.axis": (str, "space"),
    "sweep.levels": (int, 3),
    "sweep.base_refinement": (int, 1),
}

MESH_KINDS = ("icosphere", "circle", "cuboid", "file")


def _convert(key, raw, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            return _BOOLS[raw.lower()]
        return typ(raw)
    except (ValueError, KeyError):
        raise ConfigError(f"invalid value {raw!r} for key {key!r} (expected {typ.__name__})")


def parse_config(text: str) -> dict:
    """Parse key=value lines under [section] headers into a full config dict.

    Unknown keys are rejected by name; missing keys take schema defaults.
    """
    values = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, raw = line.partition("=")
        full = f"{section}.{key.strip()}" if section else key.strip()
        if full not in SCHEMA:
            raise ConfigError(f"unknown config key {full!r}")
        if full in values:
            raise ConfigError(f"duplicate config key {full!r}")
        values[full] = _convert(full, raw, SCHEMA[full][0])
    cfg = {k: d for k, (_, d) in SCHEMA.items()}
    cfg.update(values)
    _validate(cfg)
    return cfg


def load_config(path) -> dict:
    with open(path) as f:
        return parse_config(f.read())


def _validate(cfg):
    if cfg["run.flow"] not in ("mcf", "sd"):
        raise ConfigError(f"key 'run.flow': unknown flow {cfg['run.flow']!r}")
    if cfg["mesh.kind"] not in MESH_KINDS:
        raise ConfigError(f"key 'mesh.kind': choose from {MESH_KINDS}")
    if cfg["mesh.kind"] == "file" and not cfg["mesh.path"]:
        raise ConfigError("key 'mesh.path': required when mesh.kind = file")
    if cfg["run.timestep"] <= 0:
        raise ConfigError("key 'run.timestep': must be positive")
    if cfg["run.final_time"] <= 0:
        raise ConfigError("key 'run.final_time': must be positive")
    if cfg["sweep.axis"] not in ("space", "time"):
        raise ConfigError("key 'sweep.axis': must be 'space' or 'time'")


def canonical_text(cfg: dict) -> str:
    """Deterministic serialization: sorted sections, sorted keys, typed repr."""
    out = []
    section = None
    for full in sorted(cfg):
        sec, _, key = full.partition(".")
        if sec != section:
            out.append(f"[{sec}]")
            section = sec
        v = cfg[full]
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = "%.17g" % v
        out.append(f"{key} = {v}")
    return "\n".join(out) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()[:16]
