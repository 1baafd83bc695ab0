"""naghdi command line: mesh, escape-check, simulate, decay, identity, control.

Config files are plain ``key = value`` lines (``#`` starts a comment).
Recognized keys and defaults are in ``SCHEMA``; anything else is an error.
Flags override the file. Exit codes: 0 ok, 2 certification or convergence
failure, 1 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import mesh as meshlib
from .control import ControlError, ControlProblem, russell_solve
from .dynamics import (SimConfig, decay_fit, energy_balance_check, energy_drift, simulate,
                       virial_identity_check)
from .escape import (NotEscapeCandidate, RegionError, certificate_json, check_escape,
                     damping_from_region, field_region, geodesic_radial_field, greedy_balls,
                     build_escape_region, radial_field, rotation_field, shear_field)
from .forms import MaterialParams, assemble, lambda0 as lambda0_of, smallest_eigenpairs
from .geometry import Surface

log = logging.getLogger("naghdi")

SCHEMA = {
    "E": (float, 1.0),
    "mu": (float, 0.3),
    "h": (float, 0.01),
    "dt": (float, 1e-3),
    "t_end": (float, 1.0),
    "stride": (int, 1),
    "a0": (float, 0.0),
    "region": (str, "auto"),  # none | uniform | collar | balls | auto
    "eps": (float, 0.02),
    "n_balls": (int, 16),
    "taper": (float, 0.0),
    "field": (str, "radial"),  # radial | rotation | shear | logmap
    "x0": (str, "centroid"),
    "center": (int, -1),
    "lambda0": (str, "auto"),
    "initial": (str, "lowmode"),  # lowmode | smooth
    "n_modes": (int, 4),
    "p": (float, 0.5),
    "T": (float, 1.0),
    "tol": (float, 1e-10),
    "max_iters": (int, 500),
    "n_probes": (int, 4),
    "seed": (int, 0),
}

FLAG_KEYS = {"dt": "dt", "t_end": "t_end", "a0": "a0", "region": "region", "T": "T",
             "seed": "seed"}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def parse_config(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in SCHEMA:
            raise UsageError(f"config line {n}: unknown key {k!r}")
        out[k] = v
    return out


def resolve_config(raw: dict) -> dict:
    cfg = {}
    for k, (typ, default) in SCHEMA.items():
        v = raw.get(k, default)
        try:
            cfg[k] = typ(v)
        except (TypeError, ValueError):
            raise UsageError(f"{k}: cannot read {v!r} as {typ.__name__}") from None
    if not 0 < cfg["mu"] < 0.5:
        raise UsageError("mu must lie in (0, 1/2)")
    for k in ("E", "h", "dt", "t_end", "T", "eps", "tol"):
        if not cfg[k] > 0:
            raise UsageError(f"{k} must be positive")
    if cfg["a0"] < 0:
        raise UsageError("a0 must be nonnegative")
    if cfg["region"] not in ("none", "uniform", "collar", "balls", "auto"):
        raise UsageError(f"unknown region {cfg['region']!r}")
    if cfg["field"] not in ("radial", "rotation", "shear", "logmap"):
        raise UsageError(f"unknown field {cfg['field']!r}")
    if cfg["initial"] not in ("lowmode", "smooth"):
        raise UsageError(f"unknown initial data {cfg['initial']!r}")
    if cfg["lambda0"] != "auto":
        try:
            if not float(cfg["lambda0"]) >= 1:
                raise ValueError
        except ValueError:
            raise UsageError("lambda0 must be 'auto' or a number >= 1") from None
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_mesh(spec: str) -> meshlib.SurfaceMesh:
    """An OFF path, or ``kind:resolution`` for a built-in generator."""
    if ":" in spec and not Path(spec).exists():
        kind, res = spec.split(":", 1)
        return make_mesh(kind, int(res))
    return meshlib.read_off(spec)


def make_mesh(kind: str, resolution: int) -> meshlib.SurfaceMesh:
    if kind not in meshlib.GENERATORS:
        raise UsageError(f"unknown mesh kind {kind!r}; choose from {sorted(meshlib.GENERATORS)}")
    if resolution < 4:
        raise UsageError("resolution must be >= 4")
    return meshlib.GENERATORS[kind](resolution)


# ---------------------------------------------------------------------------
# shared setup

def _params(cfg):
    return MaterialParams(E_young=cfg["E"], mu_poisson=cfg["mu"], h_thickness=cfg["h"])


def _center_vertex(surface, cfg):
    if cfg["center"] >= 0:
        return cfg["center"]
    m = surface.mesh
    c = m.vertices.mean(axis=0)
    interior = np.flatnonzero(~m.boundary_mask)
    pool = interior if interior.size else np.arange(m.n_vertices)
    return int(pool[np.argmin(np.linalg.norm(m.vertices[pool] - c, axis=1))])


def _x0(surface, cfg):
    if cfg["x0"] == "centroid":
        return surface.mesh.vertices.mean(axis=0)
    try:
        x = np.array([float(s) for s in cfg["x0"].split(",")])
    except ValueError:
        raise UsageError("x0 must be 'centroid' or three comma-separated numbers") from None
    if x.shape != (3,):
        raise UsageError("x0 needs three coordinates")
    return x


def make_field(surface, cfg):
    kind = cfg["field"]
    if kind == "logmap":
        return geodesic_radial_field(surface, _center_vertex(surface, cfg))
    x0 = _x0(surface, cfg)
    return {"radial": radial_field, "rotation": rotation_field, "shear": shear_field}[kind](surface, x0)


def _lambda0(surface, params, cfg):
    if cfg["lambda0"] != "auto":
        return float(cfg["lambda0"]), None
    lam = lambda0_of(surface, params.beta)
    return lam.value, lam.as_dict()


def damping_profile(surface, params, cfg):
    """Vertex damping a(x) and a description of where it came from."""
    nv = surface.mesh.n_vertices
    region = cfg["region"]
    if region == "auto":
        region = "collar" if cfg["a0"] > 0 else "none"
    if cfg["a0"] == 0 or region == "none":
        return np.zeros(nv), {"region": "none"}
    if region == "uniform":
        return np.full(nv, cfg["a0"]), {"region": "uniform", "fraction": 1.0}
    lam, _ = _lambda0(surface, params, cfg)
    if region == "collar":
        reg = field_region(surface, make_field(surface, cfg), cfg["eps"], lam, params.beta)
    else:
        balls = greedy_balls(surface, cfg["n_balls"])
        reg = build_escape_region(surface, balls, cfg["eps"], lam, params.beta)
    a = damping_from_region(surface, reg, cfg["a0"], cfg["taper"])
    return a, {"region": region, "fraction": reg.fraction, "lambda0": lam,
               "n_subregions": len(reg.subregions)}


def initial_data(system, cfg):
    if cfg["initial"] == "lowmode":
        k = min(cfg["n_modes"], system.n_dofs)
        ev = smallest_eigenpairs(system.stiffness, system.mass, k=k, seed=cfg["seed"])
        vec = ev.vectors @ (0.5 ** np.arange(k))
        # eigenvectors carry an arbitrary sign; fix it for reproducibility
        i = int(np.argmax(np.abs(vec)))
        u0 = vec * np.sign(vec[i])
    else:
        from .control import _smooth_probe
        u0, _ = _smooth_probe(system, np.random.default_rng(cfg["seed"]))
    return u0, np.zeros_like(u0)


def _setup(args, cfg):
    mesh = load_mesh(args.mesh)
    surface = Surface(mesh)
    params = _params(cfg)
    a, info = damping_profile(surface, params, cfg)
    system = assemble(surface, params, a)
    prov = {"config_hash": config_hash(cfg), "mesh_hash": mesh.digest(), "mesh": mesh.name,
            "n_vertices": mesh.n_vertices, "n_faces": mesh.n_faces}
    return surface, params, system, info, prov


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _sidecar(path, suffix):
    return None if path is None else str(Path(path).with_suffix(suffix))


# ---------------------------------------------------------------------------
# commands

def cmd_mesh(args, cfg):
    m = make_mesh(args.kind, args.resolution)
    if args.out is None:
        raise UsageError("mesh needs --out")
    meshlib.write_off(m, args.out)
    print(f"wrote {args.out}: {m.n_vertices} vertices, {m.n_faces} triangles, "
          f"{len(m.boundary_loops)} boundary loop(s), hash {m.digest()}")
    return 0


def cmd_escape_check(args, cfg):
    surface = Surface(load_mesh(args.mesh))
    params = _params(cfg)
    lam, lam_info = _lambda0(surface, params, cfg)
    prov = {"config_hash": config_hash(cfg), "mesh_hash": surface.mesh.digest()}
    try:
        cert = check_escape(surface, make_field(surface, cfg), lam, params.beta)
    except NotEscapeCandidate as e:
        _write(args.out, _dump_json({"provenance": prov, "field": cfg["field"], "pass": False,
                                     "rejected": str(e)}))
        print(str(e), file=sys.stderr)
        return 2
    out = json.loads(certificate_json(cert))
    out.update(provenance=prov, field=cfg["field"], tolerance=cert["tolerance"])
    if lam_info is not None:
        out["lambda0_detail"] = lam_info
    _write(args.out, _dump_json(out))
    return 0 if cert["pass"] else 2


def _run(system, cfg, keep_states=False):
    sc = SimConfig(dt=cfg["dt"], t_end=cfg["t_end"], sample_stride=cfg["stride"])
    return simulate(system, initial_data(system, cfg), sc, keep_states=keep_states)[0]


def _fit(trace):
    try:
        c1, c2, r2 = decay_fit(trace)
    except ValueError:
        return {"c1": None, "c2": None, "r_squared": None}
    return {"c1": c1, "c2": c2, "r_squared": r2}


def cmd_simulate(args, cfg):
    _, _, system, info, prov = _setup(args, cfg)
    trace = _run(system, cfg)
    summary = {"provenance": prov, "damping": info, "n_dofs": system.n_dofs,
               "E0": float(trace.energies[0]), "E_final": float(trace.energies[-1]),
               "energy_drift": energy_drift(trace),
               "energy_balance_residual": energy_balance_check(trace), **_fit(trace)}
    if args.out is not None:
        Path(args.out).write_text(trace.to_csv(prov))
    _write(_sidecar(args.out, ".summary.json"), _dump_json(summary))
    return 0


def cmd_decay(args, cfg):
    _, _, system, info, prov = _setup(args, cfg)
    trace = _run(system, cfg)
    out = {"provenance": prov, "damping": info, "t_end": cfg["t_end"], "dt": cfg["dt"],
           **_fit(trace)}
    _write(args.out, _dump_json(out))
    return 0


def cmd_identity(args, cfg):
    _, _, system, info, prov = _setup(args, cfg)
    trace = _run(system, cfg, keep_states=True)
    out = {"provenance": prov, "damping": info, "p": cfg["p"], "dt": cfg["dt"],
           "virial_residual": virial_identity_check(system, trace, cfg["p"]),
           "energy_balance_residual": energy_balance_check(trace)}
    _write(args.out, _dump_json(out))
    return 0


def cmd_control(args, cfg):
    _, _, system, info, prov = _setup(args, cfg)
    if not system.damping_profile.any():
        raise UsageError("control needs a0 > 0 and a damped region")
    u0, v0 = initial_data(system, cfg)
    prob = ControlProblem(system, (u0, v0), cfg["T"], cfg["dt"], tol=cfg["tol"],
                          max_iters=cfg["max_iters"], n_probes=cfg["n_probes"], seed=cfg["seed"])
    try:
        res = russell_solve(prob)
    except ControlError as e:
        print(str(e), file=sys.stderr)
        _write(_sidecar(args.out, ".json"), _dump_json({"provenance": prov, "error": str(e),
                                                        "T": cfg["T"]}))
        return 2
    damped = np.flatnonzero(np.abs(system.damping).sum(axis=1).A1 > 0)
    if args.out is not None:
        buf = io.StringIO()
        for k, v in prov.items():
            buf.write(f"# {k}: {v}\n")
        buf.write("t," + ",".join(f"F{i}" for i in damped) + "\n")
        for t, row in zip(res.times, res.load[:, damped]):
            buf.write(f"{t:.10g}," + ",".join(f"{x:.17g}" for x in row) + "\n")
        Path(args.out).write_text(buf.getvalue())
    report = {"provenance": prov, "damping": info, "T": cfg["T"], "dt": cfg["dt"],
              **res.summary()}
    _write(_sidecar(args.out, ".json"), _dump_json(report))
    return 0


COMMANDS = {"mesh": cmd_mesh, "escape-check": cmd_escape_check, "simulate": cmd_simulate,
            "decay": cmd_decay, "identity": cmd_identity, "control": cmd_control}


def build_parser():
    p = _Parser(prog="naghdi", description="Damped Naghdi shells on triangle meshes.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        if name == "mesh":
            s.add_argument("kind", choices=sorted(meshlib.GENERATORS))
            s.add_argument("resolution", type=int)
        else:
            s.add_argument("--mesh", required=True, help="OFF file or kind:resolution")
        s.add_argument("--config", help="key = value file")
        s.add_argument("--out")
        s.add_argument("--seed", type=int)
        s.add_argument("--dt", type=float)
        s.add_argument("--t-end", dest="t_end", type=float)
        s.add_argument("--a0", type=float)
        s.add_argument("--region")
        s.add_argument("--T", dest="T", type=float)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = parse_config(Path(args.config).read_text()) if args.config else {}
        for flag, key in FLAG_KEYS.items():
            val = getattr(args, flag)
            if val is not None:
                raw[key] = val
        cfg = resolve_config(raw)
        return COMMANDS[args.command](args, cfg)
    except (NotEscapeCandidate, RegionError) as e:
        print(f"naghdi: certification failed: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:  # includes UsageError and MeshError
        print(f"naghdi: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
