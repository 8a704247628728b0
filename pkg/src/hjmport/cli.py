"""
Command-line front end.

    hjmport <command> --config cfg.json --out outdir [options]

Commands: price, g, strategy, compare, validate. Every command writes one
CSV with a fixed name (``<command>.csv``) into ``--out``.

Exit codes:
    0  success
    1  validation failure (validate only)
    2  configuration error
    3  divergent infinite-horizon kernel
    4  maturities do not span the target exposure (rank deficient)
    5  simulation failure
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from hjmport.gfunction import DivergentKernel, GKernel
from hjmport.models import Family, UtilityParams, bond_m, bond_n, bond_price, spec_from_dict
from hjmport.oracle import mc_bond_price, run_validation_suite
from hjmport.simulate import (SimConfig, SimulationError, estimate_reward_finite, estimate_reward_infinite,
                              simulate_wealth, write_path_dump)
from hjmport.strategy import (ConstantPolicy, OptimalPolicy, PortfolioMeasure, RankDeficient, StrategySolver,
                              build_f_matrix, default_maturities, g2pp_three_asset, optimal_consumption,
                              optimal_target, vasicek_two_asset)

EXIT_VALIDATION, EXIT_CONFIG, EXIT_DIVERGENT, EXIT_RANK, EXIT_SIM = 1, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


# ---------------------------------------------------------------------------
# configuration


class Experiment:
    """Parsed experiment configuration with CLI overrides applied."""

    def __init__(self, doc: dict, args):
        try:
            self.spec = spec_from_dict(doc["model"])
            u = dict(doc["utility"])
            h = u.get("horizon", 1.0)
            u["horizon"] = math.inf if (isinstance(h, str) and h.lower() in ("inf", "infinite")) else float(h)
            self.util = UtilityParams(**u)
            state = doc.get("state", {})
            self.y0 = np.asarray(state.get("y0", [0.0] * self.spec.dim_factor), dtype=float)
            if self.y0.shape != (self.spec.dim_factor,):
                raise ConfigError("state.y0 has the wrong dimension")
            self.z0 = float(state.get("z0", 1.0))
            mats = doc.get("maturities")
            self.maturities = default_maturities(self.spec) if mats is None else np.asarray(mats, dtype=float)
            if np.any(self.maturities < 0) or np.any(self.maturities > self.spec.t_star):
                raise ConfigError("maturities must lie in [0, t_star]")
            sim = dict(doc.get("sim", {}))
            if args.seed is not None:
                sim["seed"] = args.seed
            if args.paths is not None:
                sim["n_paths"] = args.paths
            if args.dt is not None:
                sim["dt"] = args.dt
            if args.threads is not None:
                sim["workers"] = args.threads
            if "horizon" not in sim:
                sim["horizon"] = self.util.horizon if not self.util.infinite else 50.0
            sim.setdefault("store_paths", False)
            self.sim = SimConfig(**sim)
            self.options = doc
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    def section(self, name: str) -> dict:
        return dict(self.options.get(name, {}))

    def t_grid(self, sec: dict):
        if "t_grid" in sec:
            return [float(t) for t in sec["t_grid"]]
        if self.util.infinite:
            return [0.0]
        grid = np.linspace(0.0, self.util.horizon, 6).tolist()
        # with b = 0 the controls are undefined at T
        return grid if self.util.b_weight > 0 else grid[:-1]

    def y_grid(self, sec: dict):
        ys = sec.get("y_grid")
        if ys is None:
            return [self.y0]
        out = [np.atleast_1d(np.asarray(y, dtype=float)) for y in ys]
        if any(y.shape != (self.spec.dim_factor,) for y in out):
            raise ConfigError("y_grid entries have the wrong dimension")
        return out


# ---------------------------------------------------------------------------
# commands


def cmd_price(exp: Experiment, out: Path, args) -> int:
    spec = exp.spec
    sec = exp.section("price")
    x_max = float(sec.get("x_max", min(10.0, spec.t_star)))
    step = float(sec.get("x_step", 0.5))
    xs = np.linspace(0.0, x_max, int(round(x_max / step)) + 1)
    n = spec.dim_factor
    rows = []
    for x in xs:
        nx = bond_n(spec, x)
        rows.append([x, *nx, bond_m(spec, x), bond_price(spec, x, exp.y0)])
    write_csv(out / "price.csv", ["x"] + [f"n_{i + 1}" for i in range(n)] + ["m", "P"], rows)
    if args.mc_check or sec.get("mc_check"):
        mc = [mc_bond_price(spec, float(x), exp.y0, exp.sim) for x in xs if x > 0]
        write_csv(out / "price_mc.csv", ["x", "P", "mc_P", "mc_stderr", "passed"],
                  [[float(r.quantity_label.split("=")[1]), r.reference_value, r.oracle_value,
                    r.diagnostics["stderr"], r.passed] for r in mc])
    return 0


def cmd_g(exp: Experiment, out: Path, args) -> int:
    spec, util = exp.spec, exp.util
    sec = exp.section("g")
    kernel = GKernel(spec, util, y_ref=exp.y0)
    n = spec.dim_factor
    rows = []
    for t in exp.t_grid(sec):
        for y in exp.y_grid(sec):
            gv = kernel.gvalue(t, y)
            c = optimal_consumption(gv, util)
            rows.append([t, *y, gv.value, *gv.grad, gv.sigma2, gv.m1, c, gv.candidate])
    header = (["t"] + [f"y_{i + 1}" for i in range(n)] + ["G"] + [f"dG/dy_{i + 1}" for i in range(n)]
              + ["sigma2", "m1", "C_hat", "candidate"])
    write_csv(out / "g.csv", header, rows)
    return 0


def _closed_form(spec, util, gv, mats):
    pos = sorted(x for x in mats if x > 0)
    if spec.family in (Family.VASICEK, Family.MERTON) and len(mats) == 2 and 0.0 in mats:
        return vasicek_two_asset(spec, util, gv, pos[0])
    if spec.family is Family.G2PP and len(mats) == 3 and 0.0 in mats:
        return g2pp_three_asset(spec, util, gv, pos[0], pos[1])
    return None


def cmd_strategy(exp: Experiment, out: Path, args) -> int:
    spec, util = exp.spec, exp.util
    sec = exp.section("strategy")
    mats = exp.maturities
    fm = build_f_matrix(spec, 0.0, np.ones(spec.dim_factor), mats)
    if not fm.full_rank:
        raise RankDeficient(mats, fm.rank, fm.needed)
    solver = StrategySolver(spec, mats)
    kernel = GKernel(spec, util, y_ref=exp.y0)
    m, n = spec.dim_noise, spec.dim_factor
    rows, closed_cols = [], None
    for t in exp.t_grid(sec):
        for y in exp.y_grid(sec):
            gv = kernel.gvalue(t, y)
            target = optimal_target(spec, util, gv, t, y).vec
            if spec.family is Family.CIR:
                red = spec.lam / (1 - util.alpha) + spec.sigma[0, 0] * gv.grad_over_g
                w = solver.solve(red)[0]
            else:
                w = solver.solve(target)[0]
            cf = _closed_form(spec, util, gv, sorted(mats.tolist()))
            row = [t, *y, *target, *w]
            if cf is not None:
                order = {x: k for k, x in enumerate(cf.maturities)}
                closed_cols = [f"closed_w_x={x:g}" for x in mats]
                row += [cf.weights[order[x]] for x in mats]
            rows.append(row + [kernel.candidate])
    header = (["t"] + [f"y_{i + 1}" for i in range(n)] + [f"target_{i + 1}" for i in range(m)]
              + [f"w_x={x:g}" for x in mats] + (closed_cols or []) + ["candidate"])
    write_csv(out / "strategy.csv", header, rows)
    return 0


def _build_policies(exp: Experiment, kernel: GKernel):
    spec, util = exp.spec, exp.util
    sec = exp.section("compare")
    specs = sec.get("policies") or [{"type": "optimal"}, {"type": "bank", "c": 0.02},
                                    {"type": "bank", "c": "c_hat"}, {"type": "bond", "x": 5.0, "c": 0.02}]
    c_hat0 = optimal_consumption(kernel.gvalue(0.0, exp.y0), util)
    pols = []
    for p in specs:
        kind = p.get("type")
        c = p.get("c", 0.0)
        c = c_hat0 if c == "c_hat" else float(c)
        if kind == "optimal":
            pols.append(OptimalPolicy(spec, util, exp.maturities, kernel=kernel))
        elif kind == "bank":
            pols.append(ConstantPolicy(spec, PortfolioMeasure.dirac(0.0), c))
        elif kind == "bond":
            pols.append(ConstantPolicy(spec, PortfolioMeasure.dirac(float(p["x"])), c))
        elif kind == "weights":
            pols.append(ConstantPolicy(spec, PortfolioMeasure(p["maturities"], p["weights"]), c, p.get("label")))
        else:
            raise ConfigError(f"unknown policy type {kind!r}")
    return pols


def cmd_compare(exp: Experiment, out: Path, args) -> int:
    spec, util = exp.spec, exp.util
    kernel = GKernel(spec, util, y_ref=exp.y0)
    cfg = exp.sim
    if not util.infinite and abs(cfg.horizon - util.horizon) > 1e-12:
        raise ConfigError("sim.horizon must equal the utility horizon")
    rows = []
    for pol in _build_policies(exp, kernel):
        dump = args.dump_paths and pol.label == "optimal"
        run_cfg = SimConfig(**{**cfg.__dict__, "store_paths": bool(dump)})
        run = simulate_wealth(spec, util, pol, exp.z0, exp.y0, run_cfg)
        if util.infinite:
            est = estimate_reward_infinite(spec, util, pol, exp.z0, exp.y0, run_cfg, run=run)
        else:
            est = estimate_reward_finite(spec, util, pol, exp.z0, exp.y0, run_cfg, run=run)
        if dump:
            write_path_dump(run, out / "paths.csv", max_paths=args.dump_paths)
        mean = est.total if util.infinite else est.mean
        se = est.total_stderr if util.infinite else est.stderr
        rows.append([est.policy_label, mean, se, est.n_paths, cfg.horizon, kernel.candidate])
    G0 = kernel.value(0.0, exp.y0)
    V = G0 ** (1 - util.alpha) * exp.z0 ** util.alpha / util.alpha
    rows.append(["value_function", V, 0.0, cfg.n_paths, cfg.horizon, kernel.candidate])
    write_csv(out / "compare.csv", ["policy_label", "mean", "stderr", "n_paths", "S", "candidate"], rows)
    return 0


def cmd_validate(exp: Experiment, out: Path, args) -> int:
    sec = exp.section("validate")
    perturb = args.perturb if args.perturb is not None else float(sec.get("perturb", 0.0))
    mc = not args.no_mc and bool(sec.get("monte_carlo", True))
    reports = run_validation_suite(exp.spec, exp.util, exp.y0, exp.sim, perturb=perturb, monte_carlo=mc)
    write_csv(out / "validate.csv",
              ["quantity_label", "reference_value", "oracle_value", "discrepancy", "tolerance", "passed",
               "candidate"],
              [[r.quantity_label, r.reference_value, r.oracle_value, r.discrepancy, r.tolerance, r.passed,
                r.candidate] for r in reports])
    failed = [r for r in reports if not r.passed]
    if not args.quiet:
        print(f"{len(reports) - len(failed)}/{len(reports)} oracle checks passed")
    return EXIT_VALIDATION if failed else 0


COMMANDS = {"price": cmd_price, "g": cmd_g, "strategy": cmd_strategy, "compare": cmd_compare,
            "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hjmport",
        description="Optimal consumption and rolling-bond portfolios under affine term-structure models.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="exit codes: 0 ok, 1 validation failure, 2 config error, 3 divergent kernel, "
               "4 rank deficient maturities, 5 simulation failure\n"
               "environment: HJMPORT_THREADS sets the default worker count")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="experiment JSON file")
    parser.add_argument("--out", default=None, help="output directory (default: config output_dir or .)")
    parser.add_argument("--seed", type=int, default=None, help="override sim.seed")
    parser.add_argument("--threads", type=int, default=None, help="worker threads for simulation")
    parser.add_argument("--paths", type=int, default=None, help="override sim.n_paths")
    parser.add_argument("--dt", type=float, default=None, help="override sim.dt")
    parser.add_argument("-q", "--quiet", action="store_true")
    parser.add_argument("--mc-check", action="store_true", help="price: also write a Monte Carlo bond check")
    parser.add_argument("--perturb", type=float, default=None, help="validate: scale reference G by 1+perturb")
    parser.add_argument("--no-mc", action="store_true", help="validate: skip Monte Carlo oracles")
    parser.add_argument("--dump-paths", type=int, default=0, metavar="N",
                        help="compare: write the first N optimal-policy paths to paths.csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        exp = Experiment(doc, args)
        out = Path(args.out or doc.get("output_dir", "."))
        code = COMMANDS[args.command](exp, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergentKernel as exc:
        print(f"divergent kernel: {exc}", file=sys.stderr)
        return EXIT_DIVERGENT
    except RankDeficient as exc:
        print(f"rank deficient: {exc}", file=sys.stderr)
        return EXIT_RANK
    except SimulationError as exc:
        print(f"simulation failure: {exc}", file=sys.stderr)
        return EXIT_SIM
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not args.quiet and code == 0:
        print(f"{args.command}: wrote {out / (args.command + '.csv')}")
    return code


if __name__ == "__main__":
    sys.exit(main())
