"""Command line: ``causalnash {solve,sweep,cot,verify}``.

Exit codes: 0 success, 1 bad input (schema, shapes, files), 2 a solver
missed its tolerance (the output is still written, with its certificate).
Set ``CAUSALNASH_LOG`` to a logging level name for diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from .causal_basis import build_basis
from .config import ConfigError, GameConfig, load_config
from .cot import CotConfig, cot_lp_oracle, cot_solve
from .entropic_ot import SinkhornConfig, entropy_bound
from .errors import ConvergenceError, InputError, PreconditionError
from .nplayer_verify import estimate_gap, lift
from .path_space import Coupling, MarkovSpec, PathMeasure, PathSpace, markov_to_measure
from .potential_game import SOLVERS, EquilibriumResult, price_of_anarchy

log = logging.getLogger("causalnash")

EXIT_OK, EXIT_INPUT, EXIT_TOLERANCE = 0, 1, 2
METRICS = ("q1prob", "poa", "cost_gap")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # Usage errors are input errors; 2 is reserved for tolerance failures.
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _num(x):
    """JSON-safe float: non-finite values become null."""
    x = float(x)
    return x if math.isfinite(x) else None


def _vec(v):
    return [_num(x) for x in np.asarray(v, dtype=float).reshape(-1)]


def _versions():
    out = {"numpy": np.__version__, "scipy": scipy.__version__}
    try:
        out["causalnash"] = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        out["causalnash"] = "unknown"
    return out


def _coupling_json(pi: Coupling):
    return {
        "rows": pi.x_space.path_labels(),
        "columns": pi.y_space.path_labels(),
        "matrix": [_vec(r) for r in pi.matrix],
    }


def result_document(cfg: GameConfig, res: EquilibriumResult, seconds: float) -> dict:
    c = res.certificate
    return {
        "schema_version": cfg.data["schema_version"],
        "config": cfg.to_dict(),
        "mode": res.mode,
        "coupling": _coupling_json(res.coupling),
        "nu_hat": {"labels": res.nu_hat.space.path_labels(), "weights": _vec(res.nu_hat.weights)},
        "lambda": _vec(res.lam),
        "phi": _vec(res.phi),
        "psi": _vec(res.psi),
        "values": {
            "transport": _num(res.transport_value),
            "energy": _num(res.energy_value),
            "variational": _num(res.variational_value),
            "total_cost": _num(res.total_cost),
        },
        "certificate": {
            "marginal_gap": _num(c.marginal_gap),
            "causality_residual": _num(c.causality_residual),
            "stationarity_gap": _num(c.stationarity_gap),
            "iterations": c.iterations,
            "converged": c.converged,
        },
        "timings": {"solve_seconds": seconds},
        "versions": _versions(),
    }


def _write_json(doc, out):
    # repr-based float output is the shortest string that parses back to the
    # same double, so values round-trip exactly.
    text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def solve_config(cfg: GameConfig, mode: str):
    """Run one equilibrium solve; returns ``(result, converged)``."""
    game, eq = cfg.game(), cfg.equilibrium_config()
    try:
        return SOLVERS[mode](game, eq), True
    except ConvergenceError as e:
        if e.partial is None:
            raise
        log.warning("%s solve did not converge: %s", mode, e)
        return e.partial, False


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    if args.p is not None:
        cfg = cfg.with_stay_probability(args.p)
    t0 = time.perf_counter()
    res, ok = solve_config(cfg, args.mode)
    _write_json(result_document(cfg, res, time.perf_counter() - t0), args.out)
    return EXIT_OK if ok and res.certificate.converged else EXIT_TOLERANCE


def first_action_probability(res: EquilibriumResult) -> float:
    """Mass of action paths whose first action is the first y symbol."""
    ys = res.nu_hat.space
    first = ys.symbol_at(np.arange(ys.size), 1) == 0
    return float(res.nu_hat.weights[first].sum())


def sweep_point(data: dict, p: float, metric: str):
    """Metric value at stay probability ``p``; returns ``(p, value, converged)``."""
    cfg = GameConfig.from_dict(data).with_stay_probability(p)
    if metric == "q1prob":
        res, ok = solve_config(cfg, "dynamic")
        return p, first_action_probability(res), ok
    if metric == "poa":
        nash, ok1 = solve_config(cfg, "dynamic")
        social, ok2 = solve_config(cfg, "social")
        poa = price_of_anarchy(cfg.game(), cfg.equilibrium_config(), nash, social)
        return p, poa.value, ok1 and ok2
    dyn, ok1 = solve_config(cfg, "dynamic")
    sta, ok2 = solve_config(cfg, "static")
    return p, dyn.total_cost - sta.total_cost, ok1 and ok2


def sweep(cfg: GameConfig, metric: str, grid, jobs: int | None = None):
    if metric not in METRICS:
        raise InputError(f"unknown metric {metric!r}; choose from {', '.join(METRICS)}")
    if cfg.stay_probability is None:
        raise ConfigError("sweeping p needs eta given as a symmetric Markov chain", "eta.markov")
    grid = [float(p) for p in grid]
    jobs = jobs or min(len(grid), os.cpu_count() or 1)
    if jobs <= 1:
        return [sweep_point(cfg.data, p, metric) for p in grid]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(sweep_point, [cfg.data] * len(grid), grid, [metric] * len(grid)))


def cmd_sweep(args) -> int:
    if args.param != "p":
        raise InputError(f"only the stay probability 'p' can be swept, not {args.param!r}")
    if args.steps < 1:
        raise InputError("--steps must be at least 1")
    if args.metric not in METRICS:
        raise InputError(f"unknown metric {args.metric!r}; choose from {', '.join(METRICS)}")
    cfg = load_config(args.config)
    grid = np.round(np.linspace(args.from_, args.to, args.steps), 12) if args.steps > 1 else [args.from_]
    if min(grid) < 0 or max(grid) > 1:
        raise InputError("p must lie in [0, 1]")
    rows = sweep(cfg, args.metric, grid, args.jobs)
    fh = sys.stdout if args.out in (None, "-") else open(args.out, "w", newline="")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", args.metric])
        for p, v, _ in rows:
            w.writerow([repr(float(p)), repr(float(v))])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK if all(ok for _, _, ok in rows) else EXIT_TOLERANCE


def _read_json(path, what):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(str(e.strerror or e), f"{what} {path}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(e.msg, f"{what} {path} line {e.lineno} column {e.colno}") from None


def load_measure(path) -> PathMeasure:
    """Path measure file: ``{"alphabet", "horizon"}`` plus ``"weights"`` or
    ``"markov": {"initial", "stay_probability" | "transitions"}``."""
    d = _read_json(path, "measure")
    try:
        space = PathSpace(len(d["alphabet"]), int(d["horizon"]), d["alphabet"])
        if "weights" in d:
            return PathMeasure(space, np.asarray(d["weights"], float), atol=1e-9)
        mk = d["markov"]
        if "stay_probability" in mk:
            chain = MarkovSpec.symmetric(mk["initial"], mk["stay_probability"], space.horizon)
        else:
            chain = MarkovSpec(np.asarray(mk["initial"], float),
                               tuple(np.asarray(P, float) for P in mk["transitions"]))
        return markov_to_measure(chain, space.labels)
    except KeyError as e:
        raise ConfigError(f"missing field {e}", f"measure {path}") from None
    except (InputError, TypeError, ValueError) as e:
        raise ConfigError(str(e), f"measure {path}") from None


def load_cost(path, eta: PathMeasure, nu: PathMeasure) -> np.ndarray:
    d = _read_json(path, "cost")
    raw = d.get("cost") if isinstance(d, dict) else d
    try:
        f = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("cost must be a numeric matrix", f"cost {path}") from None
    if f.shape != (eta.space.size, nu.space.size):
        raise ConfigError(f"shape {f.shape}, expected ({eta.space.size}, {nu.space.size})",
                          f"cost {path}")
    return f


def cmd_cot(args) -> int:
    eta, nu = load_measure(args.eta), load_measure(args.nu)
    if eta.space.horizon != nu.space.horizon:
        raise InputError(f"horizons differ: {eta.space.horizon} vs {nu.space.horizon}")
    f = load_cost(args.cost, eta, nu)
    config = CotConfig(sinkhorn=SinkhornConfig(epsilon=args.epsilon,
                                               marginal_tolerance=args.marginal_tolerance),
                       gradient_tolerance=args.gradient_tolerance, step_rule=args.step_rule)
    basis = build_basis(eta, nu.space)
    t0 = time.perf_counter()
    sol = cot_solve(eta, nu, f, basis, config)
    seconds = time.perf_counter() - t0
    ok = sol.residual <= config.gradient_tolerance
    doc = {
        "epsilon": args.epsilon,
        "coupling": _coupling_json(sol.coupling),
        "lambda": _vec(sol.lam),
        "phi": _vec(sol.phi),
        "psi": _vec(sol.psi),
        "value": _num(sol.value),
        "causality_residual": _num(sol.residual),
        "basis_size": basis.size,
        "converged": ok,
        "timings": {"solve_seconds": seconds},
        "versions": _versions(),
    }
    if args.oracle:
        lp_value, _ = cot_lp_oracle(eta, nu, f, basis)
        bound = args.epsilon * entropy_bound(eta.space.size, nu.space.size)
        doc["oracle"] = {"lp_value": lp_value, "gap": lp_value - sol.value, "bound": bound,
                         "within_bound": -1e-6 <= lp_value - sol.value <= bound + 1e-6}
    _write_json(doc, args.out)
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_verify(args) -> int:
    if args.seed is None:
        raise InputError("--seed is required")
    doc = _read_json(args.result, "result")
    try:
        mode = doc["mode"]
        cfg = GameConfig.from_dict(doc["config"])
        matrix = np.asarray(doc["coupling"]["matrix"], dtype=float)
    except KeyError as e:
        raise ConfigError(f"missing field {e}", f"result {args.result}") from None
    if mode != "dynamic":
        raise PreconditionError(f"result is from a {mode!r} solve; only dynamic equilibria "
                                f"are causal and can be played stage by stage")
    game = cfg.game()
    pi = Coupling(game.x_space, game.y_space, matrix, atol=1e-7)
    strategy = lift(pi, game.eta, tol=args.causality_tolerance)
    reports = []
    for N in args.players:
        r = estimate_gap(strategy, game, N, args.samples, args.seed)
        reports.append({
            "N": r.N, "samples": r.samples, "seed": r.seed,
            "incumbent_cost": r.incumbent_cost, "incumbent_se": _num(r.incumbent_se),
            "best_deviation_cost": r.best_deviation_cost,
            "best_deviation_se": _num(r.best_deviation_se),
            "gap": r.gap, "gap_se": _num(r.gap_se),
            "best_deviation": [game.y_space.path_label(int(y)) for y in r.best_deviation],
            "deviations_evaluated": r.deviations_evaluated,
            "low_samples": r.low_samples,
        })
    _write_json({"result": str(args.result), "reports": reports}, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="causalnash",
                                 description="Causal transport and dynamic Cournot-Nash equilibria.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="compute an equilibrium or social optimum")
    s.add_argument("config", help="JSON config file, or 'congestion' for the bundled example")
    s.add_argument("--mode", choices=sorted(SOLVERS), default="dynamic")
    s.add_argument("--p", type=float, default=None, help="override the Markov stay probability")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("sweep", help="tabulate a metric over the stay probability p")
    s.add_argument("config")
    s.add_argument("--param", default="p")
    s.add_argument("--from", dest="from_", type=float, default=0.0)
    s.add_argument("--to", type=float, default=1.0)
    s.add_argument("--steps", type=int, default=11)
    s.add_argument("--metric", required=True)
    s.add_argument("--jobs", type=int, default=None)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("cot", help="entropic causal transport between two path measures")
    s.add_argument("--eta", required=True)
    s.add_argument("--nu", required=True)
    s.add_argument("--cost", required=True)
    s.add_argument("--epsilon", type=float, default=0.01)
    s.add_argument("--step-rule", choices=["newton", "lbfgs", "backtracking", "fixed"],
                   default="newton")
    s.add_argument("--gradient-tolerance", type=float, default=1e-7)
    s.add_argument("--marginal-tolerance", type=float, default=1e-12)
    s.add_argument("--oracle", action="store_true", help="also solve the exact LP and report the gap")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_cot)

    s = sub.add_parser("verify", help="Monte-Carlo Nash gap of a dynamic equilibrium")
    s.add_argument("--result", required=True)
    s.add_argument("--players", type=int, nargs="+", required=True)
    s.add_argument("--samples", type=int, default=10_000)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--causality-tolerance", type=float, default=1e-5)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    level = os.environ.get("CAUSALNASH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, PreconditionError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ConvergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_TOLERANCE


if __name__ == "__main__":
    sys.exit(main())
