"""``slsblend`` command line: synth, simulate, sweep, compare.

Exit codes: 0 success, 1 bad input (schema, files, dimensions),
2 synthesis infeasible, 3 solver iteration limit.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, Experiment, load_config
from .controller import AntiWindupController, SlController, min_tau
from .core import DEFAULT_TOL, LinearSystem, StructureError, load_blend, save_blend, validate_fir_clm
from .distributed import distributed_run
from .simulator import (SimConfig, Trajectory, gen_disturbance, lqr_cost_estimate, make_integral_controller,
                        simulate, summary, write_summary)
from .synthesis import (LocalityMask, SynthesisError, SynthesisInfeasible, SynthesisMaxIter, synthesize_blend,
                        worst_case_peak)

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_MAXITER = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_INPUT):
        super().__init__(msg)
        self.code = code


def _synthesize(exp: Experiment, tol: float, radii=None, sigma=None):
    pl = exp.plant()
    Q, P = exp.weights()
    return synthesize_blend(
        pl, Q, P, exp.syn["T"], exp.radii if radii is None else radii, exp.distribution(sigma), exp.safety(),
        exp.mask(), exp.syn.get("projection", "saturation"), closure=exp.syn.get("closure", "general"),
        integral=exp.integral(), tol=tol)


# -- synth -------------------------------------------------------------------

def cmd_synth(args) -> int:
    exp = load_config(args.config)
    try:
        res = _synthesize(exp, args.tol)
    except SynthesisInfeasible as exc:
        raise CliError(f"{exc.family} infeasible ({exc})", EXIT_INFEASIBLE)
    except SynthesisMaxIter as exc:
        raise CliError(str(exc), EXIT_MAXITER)
    except SynthesisError as exc:
        raise CliError(str(exc), EXIT_MAXITER)
    out = Path(args.out) if args.out else exp.output("clm", "clm.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    extra = {"objective": res.objective, "diagnostics": res.diagnostics(), "plant": exp.plant().to_dict(),
             "closure": exp.syn.get("closure", "general")}
    if res.mask is not None:
        extra["mask"] = res.mask.to_dict()
    save_blend(res.blend, out, extra)
    print(f"optimal objective {res.objective:.10g}; x peak bound {res.active['x_peak_bound']:.6g} "
          f"(x_max {res.active['x_max']}), u peak bound {res.active['u_peak_bound']:.6g} "
          f"(u_max {res.active['u_max']}); wrote {out}")
    return EXIT_OK


# -- simulate ---------------------------------------------------------------------

def _load_checked_blend(path, plant: LinearSystem, tol: float):
    try:
        blend, doc = load_blend(path)
    except FileNotFoundError:
        raise CliError(f"CLM file not found: {path}")
    except (ValueError, KeyError, StructureError) as exc:
        raise CliError(f"cannot load CLM {path}: {exc}")
    if (blend.n, blend.m) != (plant.n, plant.m):
        raise CliError(f"CLM is for n={blend.n}, m={blend.m} but the plant has n={plant.n}, m={plant.m}")
    for i, z in enumerate(blend.zones):
        rep = validate_fir_clm(z, plant, tol=tol, closure=doc.get("closure", "general"))
        if not rep:
            raise CliError(f"CLM zone {i + 1} does not match the plant (residual {rep.max_residual:.3g})")
    return blend, doc


def _make_controller(exp: Experiment, args):
    sim = exp.sim
    kind = sim.get("controller", "sl")
    pl = exp.plant()
    if kind == "integral":
        g = sim.get("gains", {})
        return (lambda: make_integral_controller(pl, g.get("kp", 0.6), g.get("ki", 0.15))), None, {}
    clm_path = Path(args.clm) if args.clm else exp.output("clm", "clm.json")
    blend, doc = _load_checked_blend(clm_path, pl, args.clm_tol)
    if kind == "sl":
        return (lambda: SlController(blend)), blend, doc
    tau = sim.get("tau")
    if tau is None:
        found = min_tau(pl.A, 10 * exp.syn["T"])
        if not found.found:
            raise CliError("simulation/tau is required: no lookback makes |A^(tau+1)| < 1 for this plant")
        tau = found.tau
    doc = {**doc, "tau": int(tau)}
    return (lambda: AntiWindupController(blend, pl.A, tau)), blend, doc


def cmd_simulate(args) -> int:
    exp = load_config(args.config)
    sim = exp.sim
    pl = exp.plant()
    factory, blend, doc = _make_controller(exp, args)
    seed = args.seed if args.seed is not None else sim.get("seed", 0)
    H = sim.get("horizon", 200)
    n_traj = sim.get("trajectories", 1)
    u_max = float(exp.safety().u_max) if sim.get("saturate", False) else None
    cfg = SimConfig(pl, H, u_max=u_max, seed=seed)
    gen = exp.generator()
    runtime = "distributed" if args.distributed else "centralized"
    if args.distributed and (blend is None or "mask" not in doc):
        raise CliError("distributed runtime needs a CLM synthesized under a locality mask")

    seeds = np.random.SeedSequence(seed).spawn(n_traj)
    trajs: list[Trajectory] = []
    for k in range(n_traj):
        w = gen_disturbance(gen, H, pl.n, seeds[k])
        if args.distributed:
            tr, _ = distributed_run(pl, blend, LocalityMask.from_dict(doc["mask"]), w, cfg, tau=doc.get("tau"))
        else:
            tr = simulate(cfg, factory(), w)
        trajs.append(tr)

    Q, P = exp.weights()
    burn = sim.get("burn_in", exp.syn["T"])
    if args.out:
        csv_path, json_path = Path(args.out) / "trajectory.csv", Path(args.out) / "summary.json"
    else:
        csv_path, json_path = exp.output("trajectory", "trajectory.csv"), exp.output("summary", "summary.json")
    for p in (csv_path, json_path):
        p.parent.mkdir(parents=True, exist_ok=True)
    trajs[0].to_csv(csv_path)
    doc_out = summary(trajs[0], Q, P, exp.safety(), burn_in=min(burn, max(trajs[0].horizon - 1, 0)))
    doc_out.update({"controller": sim.get("controller", "sl"), "runtime": runtime, "seed": seed,
                    "generator": gen.to_dict(), "trajectories": n_traj,
                    "diverged_count": sum(t.diverged for t in trajs)})
    if all(t.diverged or t.horizon > burn for t in trajs):
        est = lqr_cost_estimate(trajs, Q, P, burn)
        doc_out["cost_estimate"] = {"mean": est.mean, "stderr": est.stderr, "n_used": est.n_used,
                                    "n_diverged": est.n_diverged}
    write_summary(doc_out, json_path)
    state = "DIVERGED" if doc_out["diverged"] else "bounded"
    print(f"{state}: x peak {doc_out['x_peak']:.6g}, u peak {doc_out['u_peak']:.6g}; wrote {csv_path} and {json_path}")
    return EXIT_OK


# -- sweep ------------------------------------------------------------------------

def _sweep_point(exp: Experiment, var: str, value: float, tol: float) -> dict:
    row = {"value": value}
    try:
        if var == "sigma":
            lin = _synthesize(exp, tol, radii=(exp.eta_max,), sigma=value)
            bl = _synthesize(exp, tol, sigma=value)
        else:
            if not 0 <= value <= exp.eta_max:
                raise ValueError(f"eta_1 = {value} outside [0, {exp.eta_max}]")
            lin = _synthesize(exp, tol, radii=(exp.eta_max,))
            bl = _synthesize(exp, tol, radii=(value, exp.eta_max))
    except SynthesisInfeasible as exc:
        return {**row, "status": f"{exc.family} infeasible"}
    except (SynthesisMaxIter, SynthesisError):
        return {**row, "status": "max-iter"}
    except ValueError as exc:
        return {**row, "status": f"invalid: {exc}"}
    lc, bc = lin.objective, bl.objective
    return {**row, "status": "optimal", "linear_cost": lc, "blend_cost": bc,
            "improvement_pct": 100.0 * (lc - bc) / lc if lc > 0 else 0.0}


def run_sweep(exp: Experiment, var: str, grid, tol: float = DEFAULT_TOL, jobs: int = 1) -> list[dict]:
    grid = [float(g) for g in grid]
    if jobs <= 1 or len(grid) == 1:
        return [_sweep_point(exp, var, g, tol) for g in grid]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        futs = [ex.submit(_sweep_point, exp, var, g, tol) for g in grid]
        return [f.result() for f in futs]


SWEEP_COLUMNS = ("value", "linear_cost", "blend_cost", "improvement_pct", "status")


def cmd_sweep(args) -> int:
    exp = load_config(args.config)
    sw = exp.doc.get("sweep", {})
    var = args.var or sw.get("var")
    if var not in ("sigma", "eta_1"):
        raise CliError("sweep variable must be sigma or eta_1 (--var or sweep/var)")
    grid = [float(g) for g in args.grid.split(",")] if args.grid else sw.get("grid")
    if not grid:
        raise CliError("sweep grid is empty (--grid or sweep/grid)")
    if var == "eta_1" and len(exp.radii) != 1 and len(exp.radii) != 2:
        raise CliError("eta_1 sweeps use two zones; configure radii as [eta_1, eta_max] or [eta_max]")
    rows = run_sweep(exp, var, grid, args.tol, args.jobs)
    out = Path(args.out) if args.out else exp.output("sweep", "sweep.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([var if c == "value" else c for c in SWEEP_COLUMNS])
        for r in rows:
            wr.writerow([repr(r[c]) if isinstance(r.get(c), float) else r.get(c, "") for c in SWEEP_COLUMNS])
    for r in rows:
        if r["status"] == "optimal":
            print(f"{var}={r['value']:g}: linear {r['linear_cost']:.6g}, blend {r['blend_cost']:.6g}, "
                  f"improvement {r['improvement_pct']:.2f}%")
        else:
            print(f"{var}={r['value']:g}: {r['status']}")
    print(f"wrote {out}")
    return EXIT_OK


# -- compare --------------------------------------------------------------------

COMPARE_COLUMNS = ("file", "zones", "radii", "objective", "x_peak_bound", "u_peak_bound")


def compare_rows(paths) -> list[dict]:
    rows = []
    for p in paths:
        try:
            blend, doc = load_blend(p)
        except Exception as exc:  # any unreadable file aborts the comparison
            raise CliError(f"cannot load {p}: {exc}")
        xb, ub = worst_case_peak(blend)
        rows.append({"file": str(p), "zones": blend.N, "radii": list(blend.radii),
                     "objective": doc.get("objective"), "x_peak_bound": xb, "u_peak_bound": ub})
    return rows


def cmd_compare(args) -> int:
    rows = compare_rows(args.clms)
    fmt = "{:<40} {:>5} {:<28} {:>14} {:>12} {:>12}"
    print(fmt.format(*COMPARE_COLUMNS))
    for r in rows:
        obj = "n/a" if r["objective"] is None else f"{r['objective']:.8g}"
        print(fmt.format(r["file"][-40:], r["zones"], ",".join(f"{x:g}" for x in r["radii"]), obj,
                         f"{r['x_peak_bound']:.6g}", f"{r['u_peak_bound']:.6g}"))
    if args.out:
        Path(args.out).write_text(json.dumps({"columns": list(COMPARE_COLUMNS), "rows": rows}, indent=2))
    return EXIT_OK


# -- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slsblend", description="Blended constrained-LQR controller synthesis")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize a blended CLM")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--tol", type=float, default=DEFAULT_TOL)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("simulate", help="closed-loop simulation")
    s.add_argument("--config", required=True)
    s.add_argument("--clm")
    s.add_argument("--out", help="output directory for trajectory.csv and summary.json")
    s.add_argument("--seed", type=int)
    s.add_argument("--clm-tol", type=float, default=1e-6)
    s.add_argument("--distributed", action="store_true", help="run per-node agents instead of one controller")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="linear vs blend cost over a grid")
    s.add_argument("--config", required=True)
    s.add_argument("--var", choices=("sigma", "eta_1"))
    s.add_argument("--grid", help="comma separated values")
    s.add_argument("--out")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--tol", type=float, default=DEFAULT_TOL)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("compare", help="tabulate CLM files")
    s.add_argument("clms", nargs="+")
    s.add_argument("--out", help="JSON output path")
    s.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, StructureError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SynthesisInfeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
