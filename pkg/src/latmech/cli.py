"""Command-line front end: build lattices, evaluate energies, search
mechanisms, sweep the effective density, verify bounds, assemble domain
walls, and run soft-mode scaling experiments.

Artifacts are deterministic CSV/JSON files (floats printed with 17
significant digits, fixed row order), so identical invocations produce
byte-identical output.  Exit codes: 0 success, 1 usage error, 2
precondition/build error, 3 a verified bound came back with negative
slack.
"""

from __future__ import annotations

import argparse
import csv
import json
import multiprocessing
import os
import sys
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .cellsolver import (
    estimate_density,
    lambda_grid,
    orientation_threshold,
    verify_isotropic_bound,
    verify_jensen_bounds,
)
from .energy import LatticeMap, domain_energy, energy_breakdown
from .geometry import scalar_inequality_report
from .lattice import (
    LatticeSpec,
    PeriodicDeformation,
    Supercell,
    VARIANT_KINDS,
    build_kagome,
    build_rotating_squares,
    build_variant,
)
from .mechanisms import (
    MechanismError,
    domain_wall_angles,
    domain_wall_mechanism,
    search_mechanisms,
    twist_admissible_range,
    twist_mechanism,
)
from .softmodes import (
    ConformalTarget,
    default_target,
    modulate,
    soft_mode_report,
    weak_limit_check,
)

__all__ = ["main", "RunConfig"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PRECONDITION = 2
EXIT_VERIFICATION = 3

SLACK_TOL = -1e-12


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce a run byte-for-byte."""

    command: str
    options: dict

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        skip = {"func", "command", "manifest"}
        options = {}
        for key, val in sorted(vars(args).items()):
            if key in skip:
                continue
            options[key] = val
        return cls(command=args.command, options=options)

    def to_json(self) -> str:
        return json.dumps({"command": self.command, "options": self.options},
                          sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        return cls(command=data["command"], options=data["options"])


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _out_path(args, default_name: str) -> str:
    path = getattr(args, "out", None)
    if path is None:
        path = os.path.join(os.environ.get("LATMECH_OUTDIR", "."), default_name)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def _finish(args, path: str) -> None:
    manifest = getattr(args, "manifest", None)
    if manifest:
        with open(manifest, "w") as fh:
            fh.write(RunConfig.from_args(args).to_json())
    print(f"wrote {path}")


def _load_spec(args) -> LatticeSpec:
    name = args.spec
    params = {}
    for item in (getattr(args, "params", None) or "").split(","):
        if not item:
            continue
        key, _, val = item.partition("=")
        if not _:
            raise ValueError(f"malformed --params entry {item!r}; expected key=value")
        params[key.strip()] = float(val)
    if name == "kagome":
        spec = build_kagome()
    elif name in ("rotating-squares", "rs"):
        spec = build_rotating_squares()
    elif name in VARIANT_KINDS:
        spec = build_variant(name, **params)
    elif name.endswith(".json"):
        spec = LatticeSpec.from_json(name)
    else:
        raise ValueError(
            f"unknown spec {name!r}; use a builtin (kagome, rotating-squares), "
            f"a variant kind ({', '.join(sorted(VARIANT_KINDS))}), or a JSON path"
        )
    if params and name not in VARIANT_KINDS:
        raise ValueError("--params only applies to variant kinds")
    return spec


def _parse_matrix(text: str) -> np.ndarray:
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 4:
        raise ValueError("matrix must be four comma-separated numbers, row-major")
    return np.array(vals).reshape(2, 2)


def _parse_ints(text: str):
    return [int(v) for v in text.split(",")]


def _parse_eps(text: str):
    out = []
    for item in text.split(","):
        out.append(float(Fraction(item.strip())))
    return out


def _jobs(args, n_tasks: int) -> int:
    jobs = getattr(args, "jobs", None)
    if jobs is None:
        jobs = os.cpu_count() or 1
    return max(1, min(jobs, n_tasks))


def _pool_map(fn, payloads, jobs: int):
    if jobs <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with multiprocessing.get_context("fork").Pool(jobs) as pool:
        return pool.map(fn, payloads)


def _dump_geometry(lmap: LatticeMap, path: str) -> None:
    """Plot-ready geometry: node positions, spring edges, and the rigid
    rotation angle of each penalized triangle."""
    spec = lmap.spec
    keys = sorted(lmap.values)
    index = {key: i for i, key in enumerate(keys)}
    nodes = []
    for key in keys:
        ref = lmap.reference_position(key)
        pos = lmap.values[key]
        nodes.append([int(key[0]), int(key[1][0]), int(key[1][1]),
                      float(ref[0]), float(ref[1]), float(pos[0]), float(pos[1])])
    # every placed instance of each spring class
    offs = sorted({key[1] for key in keys})
    edges = []
    for s in spec.springs:
        for o1, o2 in offs:
            a = (s.a[0], (s.a[1][0] + o1, s.a[1][1] + o2))
            b = (s.b[0], (s.b[1][0] + o1, s.b[1][1] + o2))
            if a in index and b in index:
                edges.append([index[a], index[b]])
    edges = sorted(set(map(tuple, edges)))
    triangles = []
    for t in spec.penalized_triangles:
        for o1, o2 in offs:
            refs = [(r[0], (r[1][0] + o1, r[1][1] + o2)) for r in t.nodes]
            if not all(r in index for r in refs):
                continue
            X = np.asarray([lmap.reference_position(r) for r in refs])
            Y = np.asarray([lmap.values[r] for r in refs])
            H = (Y - Y.mean(axis=0)).T @ (X - X.mean(axis=0))
            U, _, Vt = np.linalg.svd(H)
            if np.linalg.det(U @ Vt) < 0:
                U[:, -1] *= -1
            R = U @ Vt
            triangles.append({
                "nodes": [index[r] for r in refs],
                "angle": float(np.arctan2(R[1, 0], R[0, 0])),
            })
    payload = {
        "epsilon": lmap.epsilon,
        "node_columns": ["node", "offset1", "offset2", "ref_x", "ref_y", "x", "y"],
        "nodes": nodes,
        "edges": [list(e) for e in edges],
        "triangles": triangles,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_build(args) -> int:
    spec = _load_spec(args)
    path = _out_path(args, f"{spec.name}.json")
    spec.to_json(path)
    print(f"{spec.name}: {spec.n_basic} nodes, {len(spec.springs)} springs, "
          f"{len(spec.penalized_triangles)} penalized triangles, "
          f"cell area {_fmt(spec.cell_area)}")
    _finish(args, path)
    return EXIT_OK


def _cmd_energy(args) -> int:
    spec = _load_spec(args)
    cell = Supercell(spec, args.k)
    lam = _parse_matrix(args.lam) if args.lam else np.eye(2)
    if args.psi_amp > 0:
        rng = np.random.default_rng(args.seed)
        psi = args.psi_amp * rng.standard_normal((cell.n_nodes, 2))
    else:
        psi = np.zeros((cell.n_nodes, 2))
    defm = PeriodicDeformation(cell, lam, psi)
    bd = energy_breakdown(defm, args.eta)
    path = _out_path(args, "energy.csv")
    _write_csv(
        path,
        ["cell_i", "cell_j", "triangle", "spring_energy", "step_penalty"],
        bd.rows(),
    )
    print(f"spring total {_fmt(bd.spring_total)}, penalty total "
          f"{_fmt(bd.penalty_total)}, averaged density {_fmt(bd.averaged)}")
    _finish(args, path)
    return EXIT_OK


def _certificate_row(kind, label, cert):
    return [kind, label, cert.energy, cert.max_spring_residual, cert.min_det,
            cert.lam[0, 0], cert.lam[0, 1], cert.lam[1, 0], cert.lam[1, 1],
            cert.sigma1, cert.sigma2, cert.det_sign, cert.isotropy_defect]


_CERT_HEADER = ["kind", "parameter", "averaged_energy", "max_spring_residual",
                "min_det", "lam11", "lam12", "lam21", "lam22",
                "sigma1", "sigma2", "det_sign", "isotropy_defect"]


def _cmd_mechanism(args) -> int:
    spec = _load_spec(args)
    rows = []
    dump_map = None
    if args.search:
        hits = search_mechanisms(spec, args.k, restarts=args.restarts,
                                 rng_seed=args.seed, tol=args.tol)
        for i, mech in enumerate(hits):
            rows.append(_certificate_row(mech.kind, f"hit{i}", mech.certificate))
        print(f"{len(hits)} mechanism(s) found in {args.restarts} restarts at k={args.k}")
        if hits:
            best = hits[0].deformation
            cells = [(i, j) for i in range(args.k + 1) for j in range(args.k + 1)]
            dump_map = LatticeMap.from_periodic(best, 1.0, cells)
    else:
        lo, hi = twist_admissible_range(spec)
        print(f"admissible twist range ({_fmt(lo)}, {_fmt(hi)})")
        thetas = ([args.theta] if args.theta is not None
                  else np.linspace(lo + 1e-6, hi - 1e-6, args.grid_points).tolist())
        for th in thetas:
            mech = twist_mechanism(spec, th, k=args.k)
            rows.append(_certificate_row(mech.kind, _fmt(th), mech.certificate))
        last = twist_mechanism(spec, thetas[-1], k=args.k).deformation
        cells = [(i, j) for i in range(args.k + 1) for j in range(args.k + 1)]
        dump_map = LatticeMap.from_periodic(last, 1.0, cells)
    path = _out_path(args, "mechanisms.csv")
    _write_csv(path, _CERT_HEADER, rows)
    if args.dump and dump_map is not None:
        _dump_geometry(dump_map, args.dump)
        print(f"wrote geometry dump {args.dump}")
    _finish(args, path)
    return EXIT_OK


def _density_task(payload):
    spec_json, lam, eta, k, restarts, seed = payload
    spec = LatticeSpec.from_json(spec_json)
    est = estimate_density(spec, np.asarray(lam), eta=eta, k=k,
                           restarts=restarts, rng_seed=seed)
    return (est.upper, est.upper_spring, est.upper_penalty, est.lower_bracket)


def _cmd_density_sweep(args) -> int:
    spec = _load_spec(args)
    lams = lambda_grid(args.grid, rng_seed=args.seed)
    ks = _parse_ints(args.k)
    spec_json = spec.to_json()
    payloads = [(spec_json, lam.tolist(), args.eta, k, args.restarts, args.seed)
                for lam in lams for k in ks]
    results = _pool_map(_density_task, payloads, _jobs(args, len(payloads)))
    rows = []
    idx = 0
    for li, lam in enumerate(lams):
        for k in ks:
            upper, spring, penalty, bracket = results[idx]
            idx += 1
            ratio = upper / bracket if bracket > 1e-12 else float("nan")
            rows.append([li, lam[0, 0], lam[0, 1], lam[1, 0], lam[1, 1], k,
                         args.eta, upper, spring, penalty, bracket, ratio])
    path = _out_path(args, f"density_{args.grid.replace(':', '_')}.csv")
    _write_csv(
        path,
        ["index", "lam11", "lam12", "lam21", "lam22", "supercell_k", "eta",
         "upper_density", "upper_spring_part", "upper_penalty_part",
         "stretch_bracket", "upper_over_bracket"],
        rows,
    )
    uppers = [r[7] for r in rows]
    print(f"{len(lams)} matrices x k={ks}: max upper {_fmt(max(uppers))}, "
          f"min upper {_fmt(min(uppers))}")
    _finish(args, path)
    return EXIT_OK


def _cmd_verify_bounds(args) -> int:
    spec = _load_spec(args)
    reports = verify_jensen_bounds(spec, n_trials=args.trials,
                                   k_max=args.k_max, rng_seed=args.seed)
    rows = []
    worst = 0.0
    for name in sorted(reports):
        rep = reports[name]
        rows.append([name, rep.n_trials, rep.min_slack,
                     "" if rep.equality_gap is None else _fmt(rep.equality_gap)])
        worst = min(worst, rep.min_slack)
    if args.isotropic:
        iso = verify_isotropic_bound(spec, args.eta, lambda_grid("noniso"),
                                     k=1, rng_seed=args.seed)
        rows.append(["isotropy-energy-gap", iso.n_lams, iso.c_fit, ""])
        if iso.c_fit <= 0:
            worst = min(worst, iso.c_fit if iso.c_fit < 0 else -1.0)
    path = _out_path(args, "bounds.csv")
    _write_csv(path, ["bound", "trials", "min_slack", "equality_gap"], rows)
    print(f"{len(rows)} bounds verified on {spec.name}; worst slack {_fmt(worst)} "
          f"(eta threshold {_fmt(orientation_threshold(spec))})")
    _finish(args, path)
    return EXIT_OK if worst >= SLACK_TOL else EXIT_VERIFICATION


def _cmd_domain_wall(args) -> int:
    theta = domain_wall_angles(args.theta1, n=args.n)
    rows = [[i, th] for i, th in enumerate(theta)]
    path = _out_path(args, "domain_wall.csv")
    _write_csv(path, ["column", "twist_angle"], rows)
    if args.strip:
        wall = domain_wall_mechanism(args.theta1, half_width=args.half_width,
                                     rows=args.rows)
        print(f"strip m={args.half_width}: misfit {_fmt(wall.max_misfit)}, "
              f"spring residual {_fmt(wall.max_spring_residual)}, "
              f"min det {_fmt(wall.min_det)}")
        print(f"far-field compression left {_fmt(wall.compression_left)} / "
              f"right {_fmt(wall.compression_right)} "
              f"(gap {_fmt(wall.far_field_gap)}), limit angle {_fmt(wall.theta_limit)}")
    _finish(args, path)
    return EXIT_OK


def _softmode_task(payload):
    spec_json, coeffs, denom, domain, eps, sweeps = payload
    spec = LatticeSpec.from_json(spec_json)
    target = ConformalTarget(coeffs=tuple(map(complex, coeffs)),
                             domain=tuple(domain),
                             denom=tuple(map(complex, denom)))
    lmap = modulate(spec, target, eps, relax_sweeps=sweeps)
    return eps, lmap.values


def _cmd_soft_mode(args) -> int:
    spec = _load_spec(args)
    target = default_target()
    eps_list = _parse_eps(args.eps)
    spec_json = spec.to_json()
    payloads = [(spec_json, [str(c) for c in target.coeffs],
                 [str(c) for c in target.denom], list(target.domain),
                 eps, args.sweeps) for eps in eps_list]
    results = _pool_map(_softmode_task, payloads, _jobs(args, len(payloads)))
    maps = [LatticeMap(spec, eps, values) for eps, values in results]
    wl = weak_limit_check(maps, target)
    rows = []
    for i, lmap in enumerate(maps):
        rep = domain_energy(lmap, target.polygon, args.eta)
        rows.append([lmap.epsilon, rep.n_cells, rep.total / target.area,
                     rep.max_cell, wl.l2_errors[i], wl.cr_residuals[i],
                     wl.max_factors[i], wl.n_boxes[i]])
    path = _out_path(args, "soft_mode.csv")
    _write_csv(
        path,
        ["epsilon", "n_cells", "energy_per_area", "max_cell_energy",
         "probe_l2_error", "cr_residual", "max_conformal_factor", "n_boxes"],
        rows,
    )
    dens = [r[2] for r in rows]
    if len(dens) >= 2 and all(d > 1e-10 for d in dens):
        slope = float(np.polyfit(np.log(eps_list), np.log(dens), 1)[0])
        print(f"fitted decay exponent {_fmt(slope)}; "
              f"final/first {_fmt(dens[-1] / dens[0])}")
    else:
        print("energies at solver floor; decay exponent undefined")
    if args.dump_dir:
        os.makedirs(args.dump_dir, exist_ok=True)
        for lmap in maps:
            name = f"soft_mode_eps_{lmap.epsilon:.6g}.json".replace("/", "_")
            _dump_geometry(lmap, os.path.join(args.dump_dir, name))
        print(f"wrote {len(maps)} geometry dumps to {args.dump_dir}")
    _finish(args, path)
    return EXIT_OK


def _cmd_inequalities(args) -> int:
    reports = scalar_inequality_report(lam_step=args.lam_step,
                                       theta_step=args.theta_step)
    rows = []
    worst = 0.0
    for rep in reports:
        arg = list(rep.argmin) + [""] * (2 - len(rep.argmin))
        rows.append([rep.name, rep.min_slack, arg[0], arg[1]])
        worst = min(worst, rep.min_slack)
    path = _out_path(args, "inequalities.csv")
    _write_csv(path, ["inequality", "min_slack", "argmin_1", "argmin_2"], rows)
    print(f"{len(rows)} inequalities; worst slack {_fmt(worst)}")
    _finish(args, path)
    return EXIT_OK if worst >= SLACK_TOL else EXIT_VERIFICATION


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="latmech", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, spec_default=None):
        if spec_default is not None:
            p.add_argument("--spec", default=spec_default,
                           help="builtin name, variant kind, or spec JSON path")
            p.add_argument("--params", default="",
                           help="variant parameters, e.g. alpha=1.2,size_ratio=0.8")
        p.add_argument("--out", help="output path (default: $LATMECH_OUTDIR)")
        p.add_argument("--manifest", help="also write the run configuration JSON here")

    p = sub.add_parser("build", help="write a lattice spec as JSON")
    common(p, spec_default="kagome")
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("energy", help="evaluate one periodic deformation")
    common(p, spec_default="kagome")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--eta", type=float, default=0.05)
    p.add_argument("--lam", help="affine part, row-major a,b,c,d (default identity)")
    p.add_argument("--psi-amp", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_energy)

    p = sub.add_parser("mechanism", help="twist certificates or a mechanism search")
    common(p, spec_default="kagome")
    p.add_argument("--theta", type=float, help="single twist angle")
    p.add_argument("--grid-points", type=int, default=50,
                   help="certificate grid over the admissible range")
    p.add_argument("--search", action="store_true", help="random-restart search")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--restarts", type=int, default=32)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump", help="write deformed geometry JSON here")
    p.set_defaults(func=_cmd_mechanism)

    p = sub.add_parser("density-sweep", help="effective-density upper bounds on a grid")
    common(p, spec_default="kagome")
    p.add_argument("--grid", default="iso",
                   help="iso | diag | noniso | random:N | file:PATH")
    p.add_argument("--eta", type=float, default=0.05)
    p.add_argument("--k", default="1,2", help="comma-separated supercell sizes")
    p.add_argument("--restarts", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    p.set_defaults(func=_cmd_density_sweep)

    p = sub.add_parser("verify-bounds", help="explicit-constant bound verification")
    common(p, spec_default="rotating-squares")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--k-max", type=int, default=3)
    p.add_argument("--eta", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--isotropic", action="store_true",
                   help="also fit the isotropy energy-gap constant (slower)")
    p.set_defaults(func=_cmd_verify_bounds)

    p = sub.add_parser("domain-wall", help="wall angle recursion and strip assembly")
    common(p)
    p.add_argument("--theta1", type=float, required=True)
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--strip", action="store_true", help="assemble and certify the strip")
    p.add_argument("--half-width", type=int, default=15)
    p.add_argument("--rows", type=int, default=4)
    p.set_defaults(func=_cmd_domain_wall)

    p = sub.add_parser("soft-mode", help="conformal-target modulation scaling")
    common(p, spec_default="kagome")
    p.add_argument("--eps", default="1/8,1/16,1/32,1/64",
                   help="comma-separated cell sizes (fractions allowed)")
    p.add_argument("--eta", type=float, default=0.05)
    p.add_argument("--sweeps", type=int, default=200)
    p.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    p.add_argument("--dump-dir", help="write per-epsilon geometry dumps here")
    p.set_defaults(func=_cmd_soft_mode)

    p = sub.add_parser("inequalities", help="scalar inequality slack certificates")
    common(p)
    p.add_argument("--lam-step", type=float, default=0.01)
    p.add_argument("--theta-step", type=float, default=0.001)
    p.set_defaults(func=_cmd_inequalities)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ValueError, MechanismError, OSError, json.JSONDecodeError) as exc:
        print(f"latmech {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
