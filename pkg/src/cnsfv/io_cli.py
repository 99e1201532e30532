"""Config files, CSV ledgers, legacy VTK output, and the ``cnsfv`` CLI.

Config files are plain ``key = value`` lines (``#`` comments allowed).
Unknown keys are rejected so typos cannot silently change a run.  All
ledger files are written with deterministic formatting: the same config
produces byte-identical CSV output.

Subcommands::

    cnsfv solve CONFIG        run a case, write mass/energy ledgers (+VTK)
    cnsfv check CONFIG        run and verify the discrete certificates
    cnsfv convergence CONFIG  refinement studies, write errors/eoc ledgers

Exit codes: 0 success, 1 failed check or solver failure, 2 bad usage or
config.
"""

import argparse
import os
import sys

import numpy as np

from . import diagnostics
from .manufactured import (CASE_NAMES, consistency_study, convergence_study,
                           get_case, setup_case)
from .mesh import read_mesh_file
from .physics import RegularizationParams
from .scheme import ConvergenceError, run

__all__ = [
    "ConfigError",
    "parse_config",
    "write_csv",
    "read_csv",
    "write_vtk",
    "read_vtk",
    "main",
]


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""


def _parse_bool(s):
    v = s.strip().lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_levels(s):
    try:
        return tuple(int(p) for p in s.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"expected a list of integers, got {s!r}") from None


_SCHEMA = {
    "case": str,
    "mesh_file": str,
    "n": int,
    "T": float,
    "dt": float,
    "dt_from_h": _parse_bool,
    "gamma": float,
    "mu": float,
    "lam": float,
    "kappa": float,
    "omega": float,
    "kappa_tilde": float,
    "eta": float,
    "fp_tol": float,
    "fp_max_iter": int,
    "lin_tol": float,
    "out_dir": str,
    "vtk_every": int,
    "levels": _parse_levels,
    "study": str,
}

_DEFAULTS = {
    "case": "periodic-bump",
    "n": 4,
    "dt_from_h": True,
    "gamma": 2.0,
    "mu": 1.0,
    "lam": 0.0,
    "kappa": 0.0,
    "omega": 1.0,
    "kappa_tilde": 1.0,
    "eta": 0.4,
    "fp_tol": 1e-9,
    "fp_max_iter": 100,
    "lin_tol": 1e-12,
    "out_dir": "out",
    "vtk_every": 0,
    "levels": (2, 4, 8),
    "study": "errors",
}


def parse_config(path):
    """Parse a key=value config file against the known schema."""
    cfg = dict(_DEFAULTS)
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in _SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                cfg[key] = _SCHEMA[key](val)
            except ConfigError:
                raise
            except ValueError:
                raise ConfigError(
                    f"{path}:{lineno}: bad value {val!r} for {key!r}"
                ) from None
    if cfg["case"] not in CASE_NAMES:
        raise ConfigError(
            f"unknown case {cfg['case']!r}; available: {', '.join(CASE_NAMES)}"
        )
    if cfg["study"] not in ("errors", "consistency", "both"):
        raise ConfigError("study must be errors, consistency, or both")
    return cfg


# ---------------------------------------------------------------------------
# deterministic CSV ledgers


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, rows, columns=None):
    """Write dict rows to CSV with round-trip float formatting."""
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in columns))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    """Read a ledger back into a list of dicts (floats where possible)."""
    with open(path, "r") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    cols = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        row = {}
        for c, tok in zip(cols, ln.split(",")):
            try:
                row[c] = int(tok)
            except ValueError:
                try:
                    row[c] = float(tok)
                except ValueError:
                    row[c] = tok
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# legacy VTK (ASCII unstructured grid, cell data)


def write_vtk(path, mesh, rho, p_h, uhat, title="cnsfv state"):
    """Write one state snapshot as a legacy-VTK tetrahedral grid."""
    out = []
    out.append("# vtk DataFile Version 3.0")
    out.append(title)
    out.append("ASCII")
    out.append("DATASET UNSTRUCTURED_GRID")
    out.append(f"POINTS {mesh.nv} double")
    for p in mesh.verts:
        out.append(" ".join(repr(float(c)) for c in p))
    out.append(f"CELLS {mesh.nt} {5 * mesh.nt}")
    for c in mesh.tets:
        out.append("4 " + " ".join(str(int(i)) for i in c))
    out.append(f"CELL_TYPES {mesh.nt}")
    out.extend(["10"] * mesh.nt)
    out.append(f"CELL_DATA {mesh.nt}")
    out.append("SCALARS rho double 1")
    out.append("LOOKUP_TABLE default")
    out.extend(repr(float(v)) for v in rho)
    out.append("SCALARS p_h double 1")
    out.append("LOOKUP_TABLE default")
    out.extend(repr(float(v)) for v in p_h)
    out.append("VECTORS velocity double")
    for v in uhat:
        out.append(" ".join(repr(float(c)) for c in v))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(out) + "\n")


def read_vtk(path):
    """Read back a snapshot written by :func:`write_vtk`.

    Returns ``(vertices, cells, cell_data)`` with ``cell_data`` a dict
    holding ``rho``, ``p_h`` (nt,) and ``velocity`` (nt, 3).
    """
    with open(path, "r") as fh:
        tokens = fh.read().split("\n")
    it = iter(range(len(tokens)))
    idx = 0

    def expect(prefix):
        nonlocal idx
        while not tokens[idx].strip():
            idx += 1
        line = tokens[idx]
        idx += 1
        if not line.startswith(prefix):
            raise ValueError(f"expected {prefix!r}, found {line!r}")
        return line

    expect("# vtk DataFile")
    idx += 1  # title
    expect("ASCII")
    expect("DATASET UNSTRUCTURED_GRID")
    nv = int(expect("POINTS").split()[1])
    verts = np.array(
        [[float(t) for t in tokens[idx + i].split()] for i in range(nv)]
    )
    idx += nv
    nt = int(expect("CELLS").split()[1])
    cells = np.array(
        [[int(t) for t in tokens[idx + i].split()[1:]] for i in range(nt)],
        dtype=np.int64,
    )
    idx += nt
    expect("CELL_TYPES")
    idx += nt
    expect("CELL_DATA")
    data = {}
    while idx < len(tokens):
        while idx < len(tokens) and not tokens[idx].strip():
            idx += 1
        if idx >= len(tokens):
            break
        header = tokens[idx]
        idx += 1
        if header.startswith("SCALARS"):
            name = header.split()[1]
            idx += 1  # LOOKUP_TABLE
            data[name] = np.array([float(tokens[idx + i]) for i in range(nt)])
            idx += nt
        elif header.startswith("VECTORS"):
            name = header.split()[1]
            data[name] = np.array(
                [[float(t) for t in tokens[idx + i].split()] for i in range(nt)]
            )
            idx += nt
        else:
            raise ValueError(f"unsupported VTK section {header!r}")
    return verts, cells, data


# ---------------------------------------------------------------------------
# run orchestration shared by solve/check


def _reg_from_config(cfg):
    try:
        reg = RegularizationParams(kappa=cfg["kappa"], omega=cfg["omega"],
                                   kappa_tilde=cfg["kappa_tilde"],
                                   eta=cfg["eta"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    reg.validate()
    return reg


def _build_run(cfg):
    case = get_case(cfg["case"], gamma=cfg["gamma"], mu=cfg["mu"],
                    lam=cfg["lam"])
    reg = _reg_from_config(cfg)
    if not cfg["dt_from_h"] and cfg.get("dt") is None:
        raise ConfigError("dt required when dt_from_h = false")
    mesh = read_mesh_file(cfg["mesh_file"]) if cfg.get("mesh_file") else None
    mesh, bd, params, rho0, u0, T = setup_case(
        case, cfg["n"], reg=reg, dt_from_h=cfg["dt_from_h"],
        dt=cfg.get("dt"), T=cfg.get("T"), fp_tol=cfg["fp_tol"],
        lin_tol=cfg["lin_tol"], mesh=mesh,
    )
    params.fp_max_iter = cfg["fp_max_iter"]
    n_steps = int(round(T / params.dt))
    return case, mesh, bd, params, rho0, u0, n_steps


def _cmd_solve(cfg):
    case, mesh, bd, params, rho0, u0, n_steps = _build_run(cfg)
    os.makedirs(cfg["out_dir"], exist_ok=True)
    states, infos = run(mesh, params, bd, rho0, u0, n_steps,
                        forcing=case.forcing)
    mass_rows = diagnostics.mass_balance(states, bd, params.dt)
    energy_rows = diagnostics.energy_budget(states, bd, params,
                                            forcing=case.forcing)
    write_csv(os.path.join(cfg["out_dir"], "mass.csv"), mass_rows,
              ["step", "time", "mass", "outflux", "influx", "residual"])
    write_csv(os.path.join(cfg["out_dir"], "energy.csv"), energy_rows,
              ["step", "time", "kinetic", "internal", "energy",
               "dissipation", "identity_residual", "slack"])
    if cfg["vtk_every"] > 0:
        reg_law = params.regularized(mesh.h)
        for st in states:
            if st.k % cfg["vtk_every"] == 0 or st.k == n_steps:
                write_vtk(
                    os.path.join(cfg["out_dir"], f"state_{st.k:05d}.vtk"),
                    mesh, st.rho, reg_law.p(st.rho), st.uhat(),
                    title=f"{case.name} step {st.k}",
                )
    last = states[-1]
    print(f"{case.name}: {n_steps} steps to t={last.t:.6g} on "
          f"{mesh.nt} elements (h={mesh.h:.4g}, dt={params.dt:.4g})")
    print(f"  min density {last.rho.min():.6g}, "
          f"mass residual {mass_rows[-1]['residual']:.3e}")
    print(f"  ledgers in {cfg['out_dir']}/")
    return 0


def _cmd_check(cfg):
    case, mesh, bd, params, rho0, u0, n_steps = _build_run(cfg)
    states, infos = run(mesh, params, bd, rho0, u0, n_steps,
                        forcing=case.forcing)
    failures = 0

    min_rho = min(float(s.rho.min()) for s in states[1:])
    min_it = min(i.min_density for i in infos)
    ok = min_it > 0.0
    failures += not ok
    print(f"{'PASS' if ok else 'FAIL'} positivity: "
          f"min density {min_rho:.6g} (iterates {min_it:.6g})")

    mass_rows = diagnostics.mass_balance(states, bd, params.dt)
    m0 = mass_rows[0]["mass"]
    worst = max(abs(r["residual"]) for r in mass_rows)
    ok = worst <= 1e-9 * m0
    failures += not ok
    print(f"{'PASS' if ok else 'FAIL'} mass balance: "
          f"worst residual {worst:.3e} (total mass {m0:.6g})")

    energy_rows = diagnostics.energy_budget(states, bd, params,
                                            forcing=case.forcing)
    e0 = energy_rows[0]["energy"]
    worst_id = max(abs(r["identity_residual"]) for r in energy_rows)
    worst_slack = min(r["slack"] for r in energy_rows)
    ok = worst_slack >= -1e-8 * max(e0, 1.0)
    failures += not ok
    print(f"{'PASS' if ok else 'FAIL'} energy certificate: "
          f"min slack {worst_slack:.3e}, identity residual {worst_id:.3e}")

    B = lambda r: r * r
    dB = lambda r: 2.0 * r
    worst_rn = 0.0
    for k in range(1, len(states)):
        resid, _ = diagnostics.renormalized_continuity_residual(
            states[k], states[k - 1], bd, params, B, dB)
        worst_rn = max(worst_rn, float(np.abs(resid).max()))
    scale = max(
        float(np.abs(s.rho).max()) ** 2 * mesh.cell_volume.max() / params.dt
        for s in states
    )
    ok = worst_rn <= 1e-6 * scale
    failures += not ok
    print(f"{'PASS' if ok else 'FAIL'} renormalized continuity (B=rho^2): "
          f"worst residual {worst_rn:.3e} (scale {scale:.3e})")

    if case.exact_steady:
        derr = max(
            float(np.abs(s.rho - states[0].rho).max()) for s in states)
        verr = max(float(np.abs(s.v).max()) for s in states)
        ok = derr <= 1e-6 and verr <= 1e-6
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'} exact steady state: "
              f"density drift {derr:.3e}, deviation velocity {verr:.3e}")

    return 0 if failures == 0 else 1


def _cmd_convergence(cfg):
    os.makedirs(cfg["out_dir"], exist_ok=True)
    eoc_rows = []
    if cfg["study"] in ("errors", "both"):
        reg = _reg_from_config(cfg)
        res = convergence_study(
            cfg["case"], levels=cfg["levels"], reg=reg, T=cfg.get("T"),
            fp_tol=cfg["fp_tol"],
            callback=lambda r: print(
                f"  level {r['level']}: h={r['h']:.4g} "
                f"relE={r['rel_energy']:.4e} L2={r['vel_l2']:.4e}"),
        )
        for r in res["rows"]:
            r["case"] = res["case"]
        write_csv(os.path.join(cfg["out_dir"], "errors.csv"), res["rows"],
                  ["case", "level", "h", "dt", "n_steps", "t_final",
                   "rel_energy", "vel_l2", "vel_h1"])
        for q in ("rel_energy", "vel_l2", "vel_h1"):
            key = f"order_{q}"
            if key in res:
                eoc_rows.append(dict(study="errors", quantity=q,
                                     order=res[key]))
                print(f"errors: {q} order {res[key]:.3f}")
    if cfg["study"] in ("consistency", "both"):
        reg = _reg_from_config(cfg)
        res = consistency_study(
            cfg["case"], levels=cfg["levels"], reg=reg, T=cfg.get("T"),
            fp_tol=cfg["fp_tol"],
            callback=lambda r: print(
                f"  level {r['level']}: h={r['h']:.4g} "
                f"Rmass={r['res_mass']:.4e} Rmom={r['res_momentum']:.4e}"),
        )
        for r in res["rows"]:
            r["case"] = res["case"]
        write_csv(os.path.join(cfg["out_dir"], "consistency.csv"),
                  res["rows"],
                  ["case", "level", "h", "dt", "n_steps", "res_mass",
                   "res_momentum"])
        for q in ("res_mass", "res_momentum"):
            key = f"order_{q}"
            if key in res:
                eoc_rows.append(dict(study="consistency", quantity=q,
                                     order=res[key]))
                print(f"consistency: {q} order {res[key]:.3f}")
    if eoc_rows:
        write_csv(os.path.join(cfg["out_dir"], "eoc.csv"), eoc_rows,
                  ["study", "quantity", "order"])
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="cnsfv",
        description="Mixed FE-FV solver for compressible viscous flow "
                    "with general inflow/outflow data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("solve", "run a case and write the mass/energy ledgers"),
        ("check", "run a case and verify the discrete certificates"),
        ("convergence", "run refinement studies and write EOC ledgers"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="path to a key=value config file")
        p.add_argument("--out-dir", help="override the configured out_dir")
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.out_dir:
        cfg["out_dir"] = args.out_dir
    try:
        if args.command == "solve":
            return _cmd_solve(cfg)
        if args.command == "check":
            return _cmd_check(cfg)
        return _cmd_convergence(cfg)
    except ConvergenceError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
