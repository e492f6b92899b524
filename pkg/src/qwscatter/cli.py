"""Command-line entry point: ``qwscatter <command> [options]``.

Every output file carries the library version and a hash of the run
configuration. Outputs are deterministic: the same configuration and seed
give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .coin import CoinField, gauge_reduce, load_coin_profile, perturbation_norm
from .dispersion import Branch, check_pow2, free_wronskian, lambda_derivatives, lambda_of_xi, offset_grid
from .dispersive import DEFAULT_SCHEDULE, DecayExperiment, fit_decay, run_decay
from .errors import ConfigurationError, FitError, QWError, ValidationError
from .evolution import WalkOperator, apply_U_power
from .jost import JostTable, default_window, solve_jost
from .lattice import SpinorField
from .scattering import bound_states, resonance_classify, scattering_coefficients

log = logging.getLogger("qwscatter")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

# every numeric default lives here
DEFAULTS = {
    "grid": 256,  # xi samples, power of two
    "delta": 0.0,  # Im xi of the Jost grid
    "t": 100,  # simulate: steps
    "tmax": 3000,  # dispersive: last time of the schedule
    "site": 0,  # delta start position
    "rho0": float(np.sqrt(0.5)),
    "seed": 0,
    "window_margin": 8,  # sites beyond the coin support for Jost tables
    "cache_dir": ".qwscatter-cache",
    "log_level": "WARNING",
}


@dataclass
class RunConfig:
    command: str
    profile: str | None = None
    knobs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    seed: int = DEFAULTS["seed"]

    def __post_init__(self):
        for k, v in self.knobs.items():
            if k.endswith("tol") and not v > 0:
                raise ConfigurationError(f"tolerance {k} must be positive")
        if "grid" in self.knobs:
            check_pow2(self.knobs["grid"])

    def config_hash(self, coin: CoinField | None = None) -> str:
        blob = {
            "command": self.command,
            "profile": coin.to_dict() if coin is not None else None,
            "knobs": self.knobs,
            "seed": self.seed,
        }
        return hashlib.sha256(json.dumps(blob, sort_keys=True, default=str).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# output


def _atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _meta(cfg: RunConfig, chash: str) -> dict:
    return {"version": __version__, "config_hash": chash, "seed": cfg.seed, "command": cfg.command}


def write_csv(path, header, rows, meta):
    buf = io.StringIO()
    buf.write(f"# qwscatter {meta['version']} config={meta['config_hash']} seed={meta['seed']}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    _atomic_write(path, buf.getvalue().encode())


def write_json(path, payload, meta):
    doc = {"meta": meta, **payload}
    _atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())


def read_csv(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# ---------------------------------------------------------------------------
# cache


def _cache_key(coin: CoinField, branch: Branch, grid: int, delta: float, window) -> str:
    blob = json.dumps([coin.fingerprint(), branch.value, grid, repr(float(delta)), list(window)])
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def get_table(coin: CoinField, branch: Branch, grid: int, delta: float, cache_dir, window=None) -> JostTable:
    """JostTable from the cache, or computed and stored; a key mismatch inside the file forces recomputation."""
    reduced, _ = gauge_reduce(coin)
    window = tuple(window or default_window(reduced, DEFAULTS["window_margin"]))
    key = _cache_key(coin, branch, grid, delta, window)
    path = Path(cache_dir) / f"jost-{key}.npz" if cache_dir else None
    if path is not None and path.exists():
        try:
            with np.load(path) as z:
                if str(z["key"]) == key:
                    log.info("cache hit %s", path)
                    return JostTable(
                        reduced, branch, z["xi"], float(delta), window, z["m_plus"], z["m_minus"], float(z["residual"])
                    )
            log.warning("stale cache entry %s, recomputing", path)
        except (OSError, KeyError, ValueError):
            log.warning("unreadable cache entry %s, recomputing", path)
    table = solve_jost(coin, branch, delta=delta, window=window, grid=grid)
    if path is not None:
        buf = io.BytesIO()
        np.savez(buf, key=key, xi=table.xi, m_plus=table.m_plus, m_minus=table.m_minus, residual=table.residual)
        _atomic_write(path, buf.getvalue())
    return table


# ---------------------------------------------------------------------------
# commands


def _load_profile(path) -> CoinField:
    if path is None:
        raise ConfigurationError("--profile is required")
    with open(path) as fh:
        return load_coin_profile(fh.read())


def _branches(name):
    return list(Branch) if name == "both" else [Branch(name)]


def cmd_simulate(args, cfg):
    coin = _load_profile(args.profile)
    if args.initial == "delta":
        sp = [complex(s) for s in args.spinor.split(",")]
        u0 = SpinorField.delta((args.site, args.site), args.site, sp)
    else:
        if not args.initial_file:
            raise ConfigurationError("--initial file needs --initial-file")
        u0 = SpinorField.from_json(Path(args.initial_file).read_text())
    supp = coin.support or (u0.x_min, u0.x_max)
    lo = min(u0.x_min, supp[0]) - args.t - 1
    hi = max(u0.x_max, supp[1]) + args.t + 1
    op = WalkOperator(coin, (lo, hi))
    u = apply_U_power(op, u0.restrict((lo, hi)), args.t)
    meta = _meta(cfg, cfg.config_hash(coin))
    rows = [(x, v[0].real, v[0].imag, v[1].real, v[1].imag) for x, v in zip(u.sites, u.values)]
    write_csv(args.out, ["x", "up_re", "up_im", "down_re", "down_im"], rows, meta)


def cmd_dispersion(args, cfg):
    rho0 = args.rho0
    if not 0 < rho0 < 1:
        raise ValidationError(f"rho0 = {rho0} must lie in (0, 1)", assumption="0 < |alpha0| < 1")
    alpha0 = np.sqrt(1 - rho0**2)
    xi = offset_grid(args.grid)
    b = Branch(args.branch)
    lam = lambda_of_xi(xi, rho0, b).real
    d1, d2, d3 = lambda_derivatives(xi, rho0, b)
    W0 = free_wronskian(xi, alpha0, b)
    rows = zip(xi, lam, d1, d2, d3, W0.real, W0.imag)
    write_csv(args.out, ["xi", "lambda", "d1", "d2", "d3", "W0_re", "W0_im"], rows, _meta(cfg, cfg.config_hash()))


def cmd_jost(args, cfg):
    coin = _load_profile(args.profile)
    tab = get_table(coin, Branch(args.branch), args.grid, args.delta, args.cache_dir)
    rows = []
    for k, z in enumerate(tab.xi):
        for i, x in enumerate(tab.sites):
            mp, mm = tab.m_plus[k, i], tab.m_minus[k, i]
            rows.append(
                (z.real, z.imag, int(x), mp[0].real, mp[0].imag, mp[1].real, mp[1].imag)
                + (mm[0].real, mm[0].imag, mm[1].real, mm[1].imag, tab.residual)
            )
    header = ["xi_re", "xi_im", "x"]
    for name in ("m+", "m-"):
        header += [f"{name}_up_re", f"{name}_up_im", f"{name}_down_re", f"{name}_down_im"]
    write_csv(args.out, header + ["residual"], rows, _meta(cfg, cfg.config_hash(coin)))


def cmd_scattering(args, cfg):
    coin = _load_profile(args.profile)
    meta = _meta(cfg, cfg.config_hash(coin))
    flags = resonance_classify(coin)
    states = bound_states(coin, with_vectors=False)
    reports, rows = [], []
    for b in _branches(args.branch):
        rep = scattering_coefficients(get_table(coin, b, args.grid, 0.0, args.cache_dir))
        rep.resonance_flags = [f for f in flags if f.branch is b]
        rep.bound_states = [s for s in states if s.branch is b]
        reports.append(rep.to_dict())
        for k in range(len(rep.xi)):
            rows.append(
                (b.value, rep.xi[k], rep.W[k].real, rep.W[k].imag, rep.t[k].real, rep.t[k].imag)
                + (rep.r_plus[k].real, rep.r_plus[k].imag, rep.r_minus[k].real, rep.r_minus[k].imag)
            )
    out = Path(args.out)
    stem = out.with_suffix("") if out.suffix in (".json", ".csv") else out
    _guard_outputs(args.profile, stem.with_suffix(".json"), stem.with_suffix(".csv"))
    payload = {
        "reports": reports,
        "unitarity_defect": max(r["unitarity_defect"] for r in reports),
        "resonance_flags": [f.to_dict() for f in flags],
        "generic": all(f.status == "generic" for f in flags),
        "bound_states": [s.to_dict() for s in states],
    }
    write_json(stem.with_suffix(".json"), payload, meta)
    header = ["branch", "xi", "W_re", "W_im", "t_re", "t_im", "r_plus_re", "r_plus_im", "r_minus_re", "r_minus_im"]
    write_csv(stem.with_suffix(".csv"), header, rows, meta)


def cmd_dispersive(args, cfg):
    coin = _load_profile(args.profile)
    if args.schedule == "every":
        sched = tuple(range(min(100, args.tmax), args.tmax + 1))
    else:
        sched = tuple(t for t in DEFAULT_SCHEDULE if t <= args.tmax) or (args.tmax,)
    u0 = SpinorField.delta((args.site, args.site), args.site, [complex(s) for s in args.spinor.split(",")])
    exp = DecayExperiment(coin, u0, sched, args.route, args.projection)
    res = run_decay(exp)
    write_csv(args.out, ["t", "supnorm", "l2norm", "ratio", "route"], res.rows(), _meta(cfg, cfg.config_hash(coin)))


def _guard_outputs(profile, *outputs):
    """Refuse to overwrite the input profile."""
    src = Path(profile).resolve()
    for out in outputs:
        if out is not None and Path(out).resolve() == src:
            raise ConfigurationError(f"output {out} would overwrite the input profile")


def cmd_fit(args, cfg):
    try:
        rows = read_csv(args.input)
    except OSError as exc:
        raise FitError(f"cannot read {args.input}: {exc.strerror}") from exc
    if not rows:
        raise FitError(f"no data rows in {args.input}")
    try:
        t = np.array([float(r["t"]) for r in rows])
        v = np.array([float(r[args.column]) for r in rows])
    except (KeyError, TypeError, ValueError) as exc:
        raise FitError(f"unreadable column in {args.input}: {exc}") from exc
    res = fit_decay(t, v)
    payload = {"exponent": res.exponent, "stderr": res.stderr, "n_points": res.n_points}
    meta = _meta(cfg, cfg.config_hash())
    if args.out:
        write_json(args.out, payload, meta)
    else:
        print(json.dumps({"meta": meta, **payload}, indent=2, sort_keys=True))


def validate_report(coin: CoinField) -> dict:
    """Standing assumptions and which spectral and dispersive hypotheses the profile meets."""
    norms = {f"sigma{s}": perturbation_norm(coin, s) for s in (0, 1, 2)}
    finite = {s: True for s in (0, 1, 2)}
    power = coin.metadata.get("tail_power")
    if power is not None:
        # the stored profile is a truncation of an infinite power-law tail
        finite = {s: power - s > 1 for s in (0, 1, 2)}
    flags = resonance_classify(coin)
    generic = all(f.status == "generic" for f in flags)
    k = 1 if generic else 2
    ready = finite[k]
    if finite[1] and finite[2]:
        status = "generic-case ready, exceptional-case ready"
    elif finite[1]:
        status = "generic-case ready, exceptional-case not"
    else:
        status = "neither case ready"
    return {
        "assumptions": {
            "alpha0_in_unit_interval": bool(0 < abs(coin.alpha0) < 1),
            "sites_strictly_inside_disk": True,
            "coin_normalized": True,
        },
        "perturbation_norms": norms,
        "norm_finite": {f"sigma{s}": finite[s] for s in (0, 1, 2)},
        "hypotheses": {
            "spectral_structure": finite[1],  # no embedded eigenvalues, simple eigenvalues
            "finite_discrete_spectrum_generic": finite[1],  # k = 1
            "finite_discrete_spectrum_exceptional": finite[2],  # k = 2
            "dispersive_estimate": bool(ready),
        },
        "edges": [f.to_dict() for f in flags],
        "generic": generic,
        "required_k": k,
        "status": status,
    }


def cmd_validate(args, cfg):
    coin = _load_profile(args.profile)  # assumption violations raise here
    report = validate_report(coin)
    meta = _meta(cfg, cfg.config_hash(coin))
    if args.out:
        write_json(args.out, report, meta)
    else:
        print(json.dumps({"meta": meta, **report}, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qwscatter", description="Scattering and dispersive decay for 1D quantum walks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS/FFT threads")
    p.add_argument("--seed", type=int, default=DEFAULTS["seed"], help="seed for randomized probes (PCG64)")
    p.add_argument("--cache-dir", default=DEFAULTS["cache_dir"], help="Jost table cache; empty string disables")
    p.add_argument("--log-level", default=DEFAULTS["log_level"], choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="evolve an initial state t steps")
    s.add_argument("--profile", required=True)
    s.add_argument("--t", type=int, default=DEFAULTS["t"])
    s.add_argument("--initial", choices=["delta", "file"], default="delta")
    s.add_argument("--initial-file", help="SpinorField JSON records")
    s.add_argument("--site", type=int, default=DEFAULTS["site"])
    s.add_argument("--spinor", default="1,0", help="delta spinor as 'up,down' (Python complex literals)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("dispersion", help="tabulate the free band structure")
    s.add_argument("--rho0", type=float, default=DEFAULTS["rho0"])
    s.add_argument("--grid", type=int, default=DEFAULTS["grid"])
    s.add_argument("--branch", choices=["minus", "plus"], default="minus")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dispersion)

    s = sub.add_parser("jost", help="tabulate Jost functions m+ and m-")
    s.add_argument("--profile", required=True)
    s.add_argument("--branch", choices=["minus", "plus"], default="minus")
    s.add_argument("--grid", type=int, default=DEFAULTS["grid"])
    s.add_argument("--delta", type=float, default=DEFAULTS["delta"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_jost)

    s = sub.add_parser("scattering", help="Wronskian, t, r, resonances and bound states")
    s.add_argument("--profile", required=True)
    s.add_argument("--branch", choices=["minus", "plus", "both"], default="both")
    s.add_argument("--grid", type=int, default=DEFAULTS["grid"])
    s.add_argument("--out", required=True, help="output stem; writes <stem>.json and <stem>.csv")
    s.set_defaults(func=cmd_scattering)

    s = sub.add_parser("dispersive", help="sup-norm decay of U^t P u0")
    s.add_argument("--profile", required=True)
    s.add_argument("--tmax", type=int, default=DEFAULTS["tmax"])
    s.add_argument("--route", choices=["direct", "kernel", "both"], default="direct")
    s.add_argument("--projection", choices=["continuous", "upper", "lower"], default="continuous")
    s.add_argument("--schedule", choices=["default", "every"], default="default")
    s.add_argument("--site", type=int, default=DEFAULTS["site"])
    s.add_argument("--spinor", default="1,0")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dispersive)

    s = sub.add_parser("fit", help="envelope slope of a decay CSV")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--column", default="supnorm")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("validate", help="check a profile against the standing assumptions")
    s.add_argument("--profile", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_validate)
    return p


def _knobs(args) -> dict:
    skip = {"func", "command", "profile", "out", "threads", "cache_dir", "log_level", "seed", "input", "initial_file"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _error_json(exc) -> str:
    return json.dumps(
        {
            "error": type(exc).__name__,
            "message": str(exc),
            "site": getattr(exc, "site", None),
            "assumption": getattr(exc, "assumption", None),
        }
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig(args.command, getattr(args, "profile", None), _knobs(args), [], args.seed)
        if getattr(args, "profile", None) and getattr(args, "out", None):
            _guard_outputs(args.profile, args.out)
        if args.threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(args.threads):
                args.func(args, cfg)
        else:
            args.func(args, cfg)
    except (ValidationError, ConfigurationError, FitError) as exc:
        print(_error_json(exc), file=sys.stderr)
        return EXIT_VALIDATION
    except QWError as exc:
        print(_error_json(exc), file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
