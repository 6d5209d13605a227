"""``ysm`` command-line entry point.

Every output file starts with the run configuration: a ``# {json}`` comment
line for CSV, a ``config`` key for JSON.  Outputs depend only on
(config, seed); wall time goes to stderr.  Exit codes: 0 ok, 1 failed
validation criterion, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, csbp
from .oracle import MAX_ENUMERATION_N, enumerate_exact
from .phi_limit import (EXPONENTIAL, POWER, ccdf_points, check_exponential_tail, constant_C,
                        derive_regime, estimate_phi_csbp, estimate_phi_model, fit_power_tail, phi_report)
from .rng import MASK64, make_rng
from .simon_model import ModelParams, OccurrenceHistogram, histogram_json, run

SCHEMA = "ysm/1"
log = logging.getLogger("ysm")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    p: float | None = None
    alpha: float = 0.0
    n: int | None = None
    replicates: int = 1
    samples: int = 100_000
    seed: int = 0
    threads: int = 1
    output: str | None = None
    format: str = "json"
    event_cap: int = csbp.DEFAULT_EVENT_CAP
    route: str = "both"
    ell_max: int = 20
    b: float | None = None
    t_max: float = 5.0
    grid_points: int = 100
    k_min: float | None = None
    k_max: float | None = None
    quantile: float = 0.9
    paths: int = 0
    horizon: float | None = None
    criteria: list[int] | None = None
    subcommand: str | None = None

    def validate(self) -> None:
        if self.p is not None and not 0.0 < self.p < 1.0:
            raise ConfigError(f"p must lie in (0, 1), got {self.p}")
        if not self.alpha >= 0.0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.n is not None and self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        for name in ("replicates", "samples", "threads", "event_cap", "ell_max", "grid_points"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0 <= self.seed <= MASK64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        if self.route not in ("model", "csbp", "both"):
            raise ConfigError(f"route must be model, csbp or both, got {self.route!r}")
        if self.b is not None and self.b < 0:
            raise ConfigError("b must be >= 0")
        if not self.t_max > 0:
            raise ConfigError("t_max must be positive")
        if not 0.0 < self.quantile < 1.0:
            raise ConfigError("quantile must lie in (0, 1)")
        if self.paths < 0:
            raise ConfigError("paths must be >= 0")

    def echo(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if k not in ("output", "threads")}


CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"command", "subcommand"}


def _require(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _meta(cfg: RunConfig) -> dict:
    return {"schema": SCHEMA, "version": __version__, "config": cfg.echo()}


def _emit(cfg: RunConfig, report: dict, header: list[str] | None = None, rows=None) -> None:
    """Write the report as JSON, or as CSV rows under a metadata comment."""
    out = open(cfg.output, "w", newline="") if cfg.output else sys.stdout
    try:
        if cfg.format == "json" or header is None:
            json.dump({**_meta(cfg), **report}, out, indent=1, sort_keys=True, default=_jsonable)
            out.write("\n")
        else:
            out.write("# " + json.dumps(_meta(cfg), sort_keys=True) + "\n")
            out.write(",".join(header) + "\n")
            for row in rows:
                out.write(",".join(_cell(v) for v in row) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def cmd_simulate(cfg: RunConfig) -> int:
    _require(cfg, "p", "n")
    params = ModelParams(cfg.p, cfg.alpha, cfg.n, cfg.seed)
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        parts = list(pool.map(lambda r: run(params, stream=r), range(cfg.replicates)))
    merged: OccurrenceHistogram = parts[0]
    for h in parts[1:]:
        merged = merged.merge(h)
    merged.check()
    rows = sorted(merged.counts.items())
    _emit(cfg, {"histogram": histogram_json(merged, cfg.p, cfg.alpha, cfg.seed)}, ["ell", "count"], rows)
    return 0


def cmd_phi(cfg: RunConfig) -> int:
    _require(cfg, "p")
    regime = derive_regime(cfg.p, cfg.alpha)
    reports, rows = {}, []
    if cfg.route in ("model", "both"):
        _require(cfg, "n")
        est = estimate_phi_model(ModelParams(cfg.p, cfg.alpha, cfg.n, cfg.seed), cfg.replicates, cfg.threads)
        reports["model"] = phi_report(regime, est, cfg.ell_max)
    if cfg.route in ("csbp", "both"):
        est = estimate_phi_csbp(regime, cfg.samples, make_rng(cfg.seed, cfg.replicates), cfg.event_cap)
        reports["csbp"] = phi_report(regime, est, cfg.ell_max)
    for route, rep in reports.items():
        rows += [(route, e["ell"], e["est"], e["se"]) for e in rep["phi"]]
    _emit(cfg, {"routes": reports}, ["route", "ell", "est", "se"], rows)
    return 0


def cmd_tailfit(cfg: RunConfig) -> int:
    _require(cfg, "p")
    regime = derive_regime(cfg.p, cfg.alpha)
    rng = make_rng(cfg.seed, 0)
    phi = estimate_phi_csbp(regime, cfg.samples, rng, cfg.event_cap)
    report: dict = {"regime": regime.__dict__, "truncated": phi.truncated}
    if regime.regime == POWER:
        fit = fit_power_tail(phi.samples, cfg.k_min, cfg.k_max, cfg.quantile)
        report["tailfit"] = fit.to_json()
        report["predicted_exponent"] = regime.tail_exponent
        if cfg.paths:
            report["C"] = constant_C(regime, cfg.paths, make_rng(cfg.seed, 1), cfg.horizon).to_json()
    elif regime.regime == EXPONENTIAL:
        stat, bound, ok = check_exponential_tail(phi, regime)
        report["tailfit"] = {"regime": EXPONENTIAL, "fitted_value": stat, "bound": bound, "within_bound": ok}
    else:
        report["tailfit"] = {"regime": regime.regime}
    _emit(cfg, report, ["k", "ccdf"], [(int(k), c) for k, c in ccdf_points(phi.samples)])
    return 0


def cmd_oracle(cfg: RunConfig) -> int:
    _require(cfg, "p", "n")
    if cfg.n > MAX_ENUMERATION_N:
        raise ConfigError(f"exact enumeration supports n <= {MAX_ENUMERATION_N}")
    ex = enumerate_exact(cfg.p, cfg.alpha, cfg.n)
    exp = ex.as_floats()
    report = {"n": ex.n, "expected_nu": {str(k): v for k, v in exp.items()},
              "path_count": ex.path_count, "n_states": ex.n_states}
    _emit(cfg, report, ["ell", "expected_nu"], exp.items())
    return 0


def cmd_csbp(cfg: RunConfig) -> int:
    _require(cfg, "b")
    b, rng, sub = cfg.b, make_rng(cfg.seed, 0), cfg.subcommand
    if sub == "z":
        path = csbp.simulate_z(b, cfg.t_max, rng, cfg.event_cap)
        grid = np.linspace(0.0, cfg.t_max, cfg.grid_points)
        report = {"n_jumps": path.n_jumps, "truncated": path.truncated,
                  "z_end": float(path.z_at(cfg.t_max)), "births_end": int(path.count_births(cfg.t_max)),
                  "max_birth_identity_error": float(path.birth_identity_error(grid).max()),
                  "jump_times": path.jump_times, "values_after_jump": path.values_after_jump}
        _emit(cfg, report, ["t_jump", "z_after"], zip(path.jump_times, path.values_after_jump))
    elif sub == "lamperti":
        lp = csbp.simulate_lamperti(b, rng, z_horizon=cfg.t_max, event_cap=cfg.event_cap)
        top = min(cfg.t_max, lp.z_range)
        grid = np.linspace(0.0, top, cfg.grid_points)
        zs = [lp.z_at(float(t)) for t in grid]
        report = {"zeta": lp.zeta, "n_arrivals": len(lp.arrivals), "z_range": lp.z_range,
                  "grid": grid, "z": zs}
        _emit(cfg, report, ["t", "z"], zip(grid, zs))
    elif sub == "cmj":
        tr = csbp.simulate_cmj(b, cfg.t_max, rng, cfg.event_cap)
        report = {"births": len(tr.birth_times), "truncated": tr.truncated, "birth_times": tr.birth_times}
        _emit(cfg, report, ["birth_time"], ((t,) for t in tr.birth_times))
    elif sub == "moments":
        m = csbp.moment_ode(b, cfg.ell_max, cfg.t_max)
        _emit(cfg, {"t": cfg.t_max, "moments": {str(i + 1): float(v) for i, v in enumerate(m)}},
              ["ell", "moment"], ((i + 1, float(v)) for i, v in enumerate(m)))
    elif sub == "extinction":
        if b <= 1:
            raise ConfigError("extinction needs b > 1")
        c = math.log(b) + 1 / b - 1
        stats = [csbp.extinction_stats(b, rng) for _ in range(cfg.samples)]
        births = np.array([s.births for s in stats], dtype=float)
        x = np.exp(c * births)
        report = {"c": c, "samples": cfg.samples, "mean_exp_cB": float(x.mean()),
                  "se_exp_cB": float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else None,
                  "mean_births": float(births.mean()),
                  "max_identity_error": max(abs(s.births - b * s.zeta) for s in stats)}
        _emit(cfg, report, ["births", "zeta"], ((s.births, s.zeta) for s in stats))
    else:
        raise ConfigError(f"unknown csbp subcommand {sub!r}")
    return 0


def cmd_validate(cfg: RunConfig) -> int:
    from .validate import run_all

    results = run_all(cfg.criteria)
    for r in results:
        print(r.line(), file=sys.stderr)
    rows = [(r.id, r.title, "pass" if r.passed else "fail", round(r.seconds, 1)) for r in results]
    # timings are excluded from the JSON body so the report stays reproducible
    body = [{k: v for k, v in r.to_json().items() if k != "seconds"} for r in results]
    _emit(cfg, {"criteria": body, "all_passed": all(r.passed for r in results)},
          ["id", "title", "result", "seconds"], rows)
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {"simulate": cmd_simulate, "phi": cmd_phi, "csbp": cmd_csbp, "tailfit": cmd_tailfit,
            "oracle": cmd_oracle, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--output", "-o", help="output file (default: stdout)")
    common.add_argument("--format", choices=["csv", "json"])
    common.add_argument("--event-cap", type=int)

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--p", type=float, help="innovation probability in (0, 1)")
    model.add_argument("--alpha", type=float, help="weight exponent >= 0")
    model.add_argument("--n", type=int, help="string length")

    parser = argparse.ArgumentParser(prog="ysm", description="Power-weighted Simon model toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common, model], help="occurrence histogram of the string model")
    p.add_argument("--replicates", type=int)

    p = sub.add_parser("phi", parents=[common, model], help="estimate the limit law phi")
    p.add_argument("--route", choices=["model", "csbp", "both"])
    p.add_argument("--replicates", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--ell-max", type=int)

    p = sub.add_parser("tailfit", parents=[common, model], help="tail exponent or exponential bound of phi")
    p.add_argument("--samples", type=int)
    p.add_argument("--k-min", type=float)
    p.add_argument("--k-max", type=float)
    p.add_argument("--quantile", type=float)
    p.add_argument("--paths", type=int, help="also estimate the tail constant C from this many paths")
    p.add_argument("--horizon", type=float, help="martingale horizon T for C")

    sub.add_parser("oracle", parents=[common, model], help="exact E[nu_n(ell)] by enumeration (n <= 12)")

    p = sub.add_parser("csbp", help="branching-process simulators")
    csub = p.add_subparsers(dest="subcommand", required=True)
    for name, helptext in (("z", "one path of Z"), ("lamperti", "Z through the time-changed Levy path"),
                           ("cmj", "birth times of the CMJ population"), ("moments", "E[Z(t)^ell] by ODE"),
                           ("extinction", "B(inf) and int Z over many paths (b > 1)")):
        q = csub.add_parser(name, parents=[common], help=helptext)
        q.add_argument("--b", type=float, help="drift parameter b >= 0")
        if name == "moments":
            q.add_argument("--t", dest="t_max", type=float)
            q.add_argument("--ell-max", type=int)
        elif name == "extinction":
            q.add_argument("--samples", type=int)
        else:
            q.add_argument("--t-max", type=float)
            q.add_argument("--grid-points", type=int)

    p = sub.add_parser("validate", parents=[common], help="run the acceptance criteria")
    p.add_argument("--criteria", type=lambda s: [int(x) for x in s.split(",")],
                   help="comma-separated criterion ids (default: all)")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text())
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(data) - CONFIG_KEYS)
        if unknown:
            raise ConfigError("unknown config key(s): " + ", ".join(unknown))
        values.update(data)
    for k, v in vars(args).items():
        if k in CONFIG_KEYS and v is not None:
            values[k] = v
    cfg = RunConfig(command=args.command, subcommand=getattr(args, "subcommand", None), **values)
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args)
        t0 = time.perf_counter()
        code = COMMANDS[cfg.command](cfg)
        log.info("%s finished in %.2f s", cfg.command, time.perf_counter() - t0)
        return code
    except (ConfigError, ValueError, OSError, TypeError) as exc:
        print(f"ysm {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
