"""Command-line front end.

Exit codes: 0 success, 1 usage or input error, 2 negative verdict (the
marginals are not in convex order), 3 a certificate failed.

Every JSON output embeds the resolved run configuration, keys are sorted
and floats carry 17 significant digits, so identical inputs and seeds give
byte-identical files.
"""

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .decompose import ConvexOrderError
from .measures import MeasureError, convex_order_1d, convex_order_lp, load_measure, measure_from_dict
from .kernel import KernelError, MartingaleKernel

__all__ = ["RunConfig", "ConfigError", "main", "dumps"]

EXIT_OK, EXIT_USAGE, EXIT_NEGATIVE, EXIT_CERT = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class _UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Resolved options of one run; unknown keys are rejected."""

    command: str = ""
    mu: str = None
    nu: str = None
    solution: str = None
    peacock: str = None
    method: str = "auto"
    dim: int = None
    gap_tol: float = 1e-6
    max_iter: int = 500
    quad_order: int = 32
    paths: int = 100000
    seed: int = 0
    grid: str = "0:1:64"
    pieces: int = 1
    suite: str = ",".join(("lipschitz", "martingale", "monotonicity", "scaling", "consistency", "crossval"))
    trials: int = 100
    slack: float = 1e-3
    threads: int = None
    out: str = None
    format: str = "json"

    @classmethod
    def from_mapping(cls, d):
        known = {f.name for f in fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"unknown config keys: {', '.join(extra)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


# -- output -----------------------------------------------------------------


def _encode(obj):
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return format(v, ".17g") if math.isfinite(v) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(obj[k])}" for k in sorted(obj, key=str)) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj):
    """Deterministic JSON: sorted keys, 17 significant digits, NaN as null."""
    return _encode(obj)


def _emit(cfg, payload, name="result.json"):
    text = dumps({"config": cfg.to_dict(), **payload}) + "\n"
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
    else:
        sys.stdout.write(text)


def _out_dir(cfg):
    if not cfg.out:
        raise _UsageError("--format csv needs --out DIR")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _g(v):
    return format(float(v), ".17g")


# -- commands ------------------------------------------------------------------


def _marginals(cfg):
    if not cfg.mu or not cfg.nu:
        raise _UsageError("--mu and --nu are required")
    mu, nu = load_measure(cfg.mu), load_measure(cfg.nu)
    if mu.dim != nu.dim:
        raise MeasureError(f"dimension mismatch: mu has dim {mu.dim}, nu has dim {nu.dim}")
    if cfg.dim is not None and cfg.dim != mu.dim:
        raise MeasureError(f"--dim {cfg.dim} but the measures have dim {mu.dim}")
    return mu, nu


def _opts(cfg, method=None):
    from .wot import WotOptions

    return WotOptions(gap_tol=cfg.gap_tol, max_iter=cfg.max_iter, quad_order=cfg.quad_order,
                      method=method or "fw")


def cmd_check_order(cfg):
    mu, nu = _marginals(cfg)
    ok = convex_order_1d(mu, nu) if mu.dim == 1 else convex_order_lp(mu, nu)
    _emit(cfg, {"in_convex_order": bool(ok), "dim": mu.dim})
    return EXIT_OK if ok else EXIT_NEGATIVE


def _solve(cfg, mu, nu):
    from .wot import solve_wot, solve_wot_1d_by_components

    method = {"auto": "fw"}.get(cfg.method, cfg.method)
    if method not in ("fw", "bass", "newton"):
        raise _UsageError(f"--method must be fw, bass, newton or auto for solve, got {cfg.method!r}")
    if mu.dim == 1:
        return solve_wot_1d_by_components(mu, nu, _opts(cfg, method))
    if method != "fw":
        raise _UsageError("only the fw method is available in the plane")
    return solve_wot(mu, nu, _opts(cfg, "fw"))


def cmd_solve(cfg):
    mu, nu = _marginals(cfg)
    sol = _solve(cfg, mu, nu)
    payload = {"solution": sol.to_dict()}
    if cfg.format == "csv":
        out = _out_dir(cfg)
        k = sol.kernel
        with (out / "kernel.csv").open("w") as fh:
            fh.write("i,j,x,y,probability\n")
            for i, j in zip(*np.nonzero(k.pi)):
                xs = ";".join(_g(v) for v in k.mu.atoms[i])
                ys = ";".join(_g(v) for v in k.nu.atoms[j])
                fh.write(f"{i},{j},{xs},{ys},{_g(k.pi[i, j])}\n")
    _emit(cfg, payload)
    return EXIT_OK


def _grid(cfg):
    from .dynamics import parse_grid

    return parse_grid(cfg.grid)


def cmd_simulate(cfg):
    from .bass import planar_model_from_solution
    from .dynamics import fit_sbm, simulate

    mu, nu = _marginals(cfg)
    times = _grid(cfg)
    if mu.dim == 1:
        model = fit_sbm(mu, nu, method="picard" if cfg.method == "bass" else "newton")
    else:
        model = planar_model_from_solution(_solve(cfg, mu, nu))
    ens = simulate(model, times, cfg.paths, cfg.seed, threads=cfg.threads)
    if cfg.format == "csv":
        if mu.dim != 1:
            raise _UsageError("CSV path export is available on the line only")
        ens.to_csv(_out_dir(cfg) / "paths.csv")
    _emit(cfg, {"ensemble": ens.summary()}, "summary.json")
    return EXIT_OK


def cmd_interpolate(cfg):
    from .dynamics import fit_sbm, interpolate

    mu, nu = _marginals(cfg)
    if mu.dim != 1:
        raise _UsageError("interpolate works on the line")
    method = {"auto": "quadrature"}.get(cfg.method, cfg.method)
    if method not in ("quadrature", "montecarlo"):
        raise _UsageError(f"--method must be quadrature or montecarlo, got {cfg.method!r}")
    curve = interpolate(fit_sbm(mu, nu), _grid(cfg), method, order=cfg.quad_order, N=cfg.paths, seed=cfg.seed,
                        threads=cfg.threads)
    if cfg.format == "csv":
        with (_out_dir(cfg) / "curve.csv").open("w") as fh:
            fh.write("t,x,weight\n")
            for t, m in zip(curve.times, curve.measures):
                for x, w in zip(m.x, m.weights):
                    fh.write(f"{_g(t)},{_g(x)},{_g(w)}\n")
    _emit(cfg, {"curve": curve.to_dict()}, "curve.json")
    return EXIT_OK


def _load_peacock(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
        return [(float(r["t"]), measure_from_dict(r["measure"])) for r in data]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise MeasureError(f"{path}: malformed peacock file ({exc})") from exc


def cmd_localvol(cfg):
    from .dynamics import localvol_chain

    if not cfg.peacock:
        raise _UsageError("--peacock FILE is required")
    peacock = _load_peacock(cfg.peacock)
    steps = max(1, (_grid(cfg).size - 1) // cfg.pieces)
    _, ens = localvol_chain(peacock, cfg.pieces, steps=steps, N=cfg.paths, seed=cfg.seed, threads=cfg.threads)
    if cfg.format == "csv":
        ens.to_csv(_out_dir(cfg) / "paths.csv")
    _emit(cfg, {"ensemble": ens.summary()}, "summary.json")
    return EXIT_OK


def cmd_verify(cfg):
    from .verify import SUITES, run_suite
    from .wot import kernel_objective, WotSolution

    suites = [s.strip() for s in cfg.suite.split(",") if s.strip()]
    bad = sorted(set(suites) - set(SUITES))
    if bad:
        raise _UsageError(f"unknown suites {bad}; choose from {', '.join(SUITES)}")
    solution = None
    if cfg.solution:
        try:
            with open(cfg.solution) as fh:
                d = json.load(fh)
            d = d.get("solution", d)
            kernel = MartingaleKernel.from_dict(d["kernel"] if "mu" not in d else d)
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise MeasureError(f"{cfg.solution}: malformed solution file ({exc})") from exc
        mu, nu = kernel.mu, kernel.nu
        value = kernel_objective(kernel, cfg.quad_order)
        solution = WotSolution(kernel, value, float("nan"), 0, [value], True, {"source": cfg.solution})
    else:
        mu, nu = _marginals(cfg)
    reports = run_suite(mu, nu, suites, _opts(cfg), seed=cfg.seed, trials=cfg.trials, slack=cfg.slack,
                        solution=solution)
    passed = all(r.passed for r in reports)
    _emit(cfg, {"passed": passed, "reports": [r.to_dict() for r in reports]}, "verify.json")
    return EXIT_OK if passed else EXIT_CERT


COMMANDS = {
    "check-order": (cmd_check_order, "test whether mu precedes nu in convex order"),
    "solve": (cmd_solve, "solve the weak transport problem and print the optimal kernel"),
    "simulate": (cmd_simulate, "sample paths of the fitted stretched Brownian motion"),
    "interpolate": (cmd_interpolate, "marginal flow law(M_t) on a time grid"),
    "localvol": (cmd_localvol, "chain sBm pieces through a peacock"),
    "verify": (cmd_verify, "run certificates on a solution or a pair of measures"),
}


# -- argument parsing -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _add_common(p):
    d = RunConfig()
    p.add_argument("--config", metavar="FILE", help="JSON file with RunConfig keys; flags override it")
    p.add_argument("--mu", metavar="FILE", help="first marginal (.json or .csv)")
    p.add_argument("--nu", metavar="FILE", help="second marginal (.json or .csv)")
    p.add_argument("--dim", type=int, help="expected dimension of the measures (1 or 2)")
    p.add_argument("--method", help=f"solver or interpolation method (default {d.method})")
    p.add_argument("--gap-tol", type=float, help=f"Frank-Wolfe duality-gap tolerance (default {d.gap_tol})")
    p.add_argument("--max-iter", type=int, help=f"Frank-Wolfe iteration cap (default {d.max_iter})")
    p.add_argument("--quad-order", type=int,
                   help=f"Gaussian quadrature order per axis (default {d.quad_order})")
    p.add_argument("--paths", type=int, help=f"number of simulated paths (default {d.paths})")
    p.add_argument("--seed", type=int, help=f"random seed (default {d.seed})")
    p.add_argument("--grid", help=f"time grid 'start:stop:count' (default {d.grid})")
    p.add_argument("--threads", type=int, help="worker threads (default: MBB_THREADS or 1)")
    p.add_argument("--out", metavar="DIR", help="write outputs to DIR instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), help="also write CSV data when 'csv' (needs --out)")


def build_parser():
    parser = _Parser(prog="sbm", description="Stretched Brownian motion between discrete marginals.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        _add_common(p)
        if name == "verify":
            p.add_argument("--solution", metavar="FILE", help="solution JSON written by 'sbm solve'")
            p.add_argument("--suite", help="comma-separated certificates (default: all)")
            p.add_argument("--trials", type=int, help="pairs tried by the monotonicity certificate")
            p.add_argument("--slack", type=float, help="discretisation slack of the Lipschitz certificate")
        if name == "localvol":
            p.add_argument("--peacock", metavar="FILE", help="JSON list of {t, measure} records")
            p.add_argument("--pieces", type=int, help="number of chained pieces")
    return parser


def resolve_config(args):
    base = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        if not isinstance(base, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
    cfg = RunConfig.from_mapping(base)
    for k, v in vars(args).items():
        if k != "config" and v is not None:
            setattr(cfg, k.replace("-", "_"), v)
    cap = os.environ.get("MBB_THREADS")
    if cap:
        cfg.threads = min(cfg.threads or int(cap), int(cap))
    if cfg.paths < 1 or cfg.quad_order < 2 or cfg.gap_tol <= 0:
        raise ConfigError("need paths >= 1, quad_order >= 2 and gap_tol > 0")
    return cfg


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        cfg = resolve_config(args)
        return COMMANDS[cfg.command][0](cfg)
    except (_UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvexOrderError as exc:
        print(f"error: marginals are not in convex order: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MeasureError, KernelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
