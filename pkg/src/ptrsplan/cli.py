"""ptrsplan command line.

Every data file written under --out-dir gets a ``<file>.config.json``
sidecar holding the resolved arguments and a timestamp; the data files
themselves depend only on the arguments and the seed.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import difflib
import json
import logging
import math
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__, chainsim, cost, expmodel, planner, pncore, wiener
from .errors import DomainError

log = logging.getLogger("ptrsplan")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- argument helpers -------------------------------------------------------

def _parse_range(text: str, kind=float) -> list:
    """``lo:hi:step`` with inclusive ends, a comma list, or a single value."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"range {text!r} must look like lo:hi:step")
        lo, hi, step = (kind(float(p)) if kind is int else kind(p) for p in parts)
        if step <= 0:
            raise argparse.ArgumentTypeError("range step must be positive")
        if hi < lo:
            raise argparse.ArgumentTypeError("range end lies below its start")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        if kind is int:
            return [lo + k * step for k in range(count)]
        # 12 significant digits strips the drift of lo + k*step without moving exact endpoints
        return [float(f"{v:.12g}") for v in lo + step * np.arange(count)]
    try:
        return [kind(float(p)) if kind is int else kind(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot read {text!r} as a list of numbers") from None


def _p1_arg(text):
    if text == "center":
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--p1 takes a 1-based position or 'center'") from None


def _int_range(text):
    return _parse_range(text, int)


def _float_range(text):
    return _parse_range(text, float)


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting, and suggests the closest known flag or command."""

    known: list[str] = []

    def error(self, message):
        hint = ""
        m = re.search(r"unrecognized arguments: (\S+)", message) or \
            re.search(r"invalid choice: '([^']+)'", message)
        if m:
            close = difflib.get_close_matches(m.group(1), self.known, n=1)
            if close:
                hint = f" (did you mean {close[0]}?)"
        raise UsageError(f"{self.prog}: {message}{hint}")


def _add_model_args(p, fc_fallback=True):
    g = p.add_argument_group("model")
    g.add_argument("--a", type=float, help="decay rate per sample")
    g.add_argument("--b", type=float, help="correlation floor")
    g.add_argument("--model", type=Path, help="model JSON written by `fit`")
    if fc_fallback:
        g.add_argument("--fc", type=float, help="carrier in Hz; picks the tabulated model when a/b are absent")


def _add_pattern_args(p, delta=True):
    g = p.add_argument_group("pilot pattern")
    g.add_argument("--n", type=int, default=pncore.DEFAULT_N, help="samples per symbol")
    if delta:
        g.add_argument("--delta", type=int, required=False, help="pilot spacing")
        g.add_argument("--p1", type=int, default=1, help="1-based position of the first pilot")
        g.add_argument("--n-pilots", type=int, help="override the pilot count")
    else:
        g.add_argument("--p1", type=_p1_arg, default=1,
                       help="first pilot position, or 'center' for delta // 2 at each spacing")


def _model(args) -> expmodel.ExpModel:
    if args.model is not None:
        return expmodel.load_model(args.model)
    if args.a is not None or args.b is not None:
        if args.a is None or args.b is None:
            raise UsageError("give both --a and --b")
        return expmodel.ExpModel(args.a, args.b, fc_hz=getattr(args, "fc", None))
    if getattr(args, "fc", None) is not None:
        return planner.model_for_fc(args.fc)
    raise UsageError("a model is needed: --a/--b, --model or --fc")


def _pattern(args, delta=None) -> wiener.PilotPattern:
    delta = delta if delta is not None else args.delta
    if delta is None:
        raise UsageError("--delta is required")
    return wiener.PilotPattern.for_spacing(args.n, delta, args.p1, args.n_pilots)


def _seed(args) -> int:
    env = os.environ.get("PTRS_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"PTRS_SEED={env!r} is not an integer") from None
    return args.seed


# -- output helpers ---------------------------------------------------------

def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _out_path(args, default_name: str) -> Path:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / (args.out or default_name)


def _sidecar(args, path: Path, extra: dict | None = None) -> None:
    cfg = {k: _jsonable(v) for k, v in vars(args).items() if k != "func"}
    doc = {
        "command": args.command,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "args": cfg,
    }
    if extra:
        doc.update(extra)
    Path(f"{path}.config.json").write_text(json.dumps(doc, indent=2) + "\n")


def _write_json(args, path: Path, payload: dict, extra=None) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n")
    _sidecar(args, path, extra)
    print(json.dumps(payload, indent=2))


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text())


# -- subcommands --------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = pncore.load_psd(args.psd) if args.psd else pncore.default_psd()
    seed = _seed(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = args.out or "trace"
    for i in range(args.count):
        tr = pncore.synthesize(spec, args.fc, args.fs, args.n, seed, index=i)
        if args.format == "csv":
            path = out_dir / f"{stem}_{i:04d}.csv"
            pncore.write_trace_csv(tr, path)
        else:
            path = out_dir / f"{stem}_{i:04d}.bin"
            pncore.write_trace(tr, path)
        _sidecar(args, path, {"seed": seed, "index": i})
        print(path)
    return EXIT_OK


def cmd_autocorr(args) -> int:
    if args.traces:
        traces = [pncore.load_trace(p) for p in args.traces]
    else:
        spec = pncore.load_psd(args.psd) if args.psd else pncore.default_psd()
        traces = pncore.synthesize_batch(spec, args.fc, args.fs, args.n, args.count, _seed(args))
    max_lag = args.max_lag if args.max_lag is not None else traces[0].phases.size - 1
    est = pncore.empirical_autocorr(traces, max_lag)
    path = _out_path(args, "autocorr.csv")
    pncore.write_autocorr_csv(est, path)
    _sidecar(args, path, {"seed": _seed(args), "n_realizations": est.n_realizations,
                          "max_imag": est.max_imag})
    print(path)
    return EXIT_OK


def cmd_fit(args) -> int:
    est = pncore.read_autocorr_csv(args.from_file)
    lag_range = None
    if args.lag_range:
        lo, hi = (int(v) for v in args.lag_range.split(":"))
        lag_range = (lo, hi)
    model = expmodel.fit(est, lag_range, fc_hz=args.fc)
    path = _out_path(args, "model.json")
    _write_json(args, path, model.to_dict())
    return EXIT_OK


def cmd_coeffs(args) -> int:
    if args.from_file:
        src = Path(args.from_file)
        weights = wiener.read_coefficients_bin(src) if src.suffix == ".bin" else wiener.read_coefficients_csv(src)
        method = "file"
    else:
        model, pattern = _model(args), _pattern(args)
        coeffs = (wiener.coefficients_numeric(model, pattern) if args.method == "numeric"
                  else wiener.coefficients(model, pattern))
        weights, method = coeffs.weights, coeffs.method
    ext = "bin" if args.format == "bin" else "csv"
    path = _out_path(args, f"coeffs.{ext}")
    if ext == "bin":
        wiener.write_coefficients_bin(weights, path)
    else:
        wiener.write_coefficients_csv(weights, path)
    _sidecar(args, path, {"method": method, "shape": list(weights.shape)})
    print(path)
    return EXIT_OK


def _cost_inputs_from_file(args):
    doc = _read_json(args.from_file)
    inp = doc["inputs"]
    model = expmodel.ExpModel.from_dict(inp["model"])
    pattern = wiener.PilotPattern(**inp["pattern"])
    # flags given on the command line win over the recorded inputs
    return (model, pattern, args.method or inp.get("method", "boxed"),
            args.variant or inp.get("variant", "corrected"))


def cmd_cost(args) -> int:
    if args.from_file:
        model, pattern, method, variant = _cost_inputs_from_file(args)
    else:
        model, pattern = _model(args), _pattern(args)
        method, variant = args.method or "boxed", args.variant or "corrected"
    report = cost.evaluate(model, pattern, method, variant)
    payload = report.to_dict()
    if args.terms and pattern.n_pilots >= 3:
        payload["terms"] = cost.cost_terms(model, pattern, variant)
    payload["inputs"] = {
        "model": model.to_dict(),
        "pattern": {"n_total": pattern.n_total, "p1": pattern.p1, "delta": pattern.delta,
                    "n_pilots": pattern.n_pilots},
        "method": method,
        "variant": variant,
    }
    path = _out_path(args, "cost.json")
    _write_json(args, path, payload)
    if args.debug_local:
        local = cost.local_costs(model, pattern)
        lpath = path.with_name(path.stem + "_local.csv")
        with open(lpath, "w", newline="") as fh:
            fh.write("n,j_n\n")
            for i, v in enumerate(local, start=1):
                fh.write(f"{i},{v:.17g}\n")
        _sidecar(args, lpath)
    return EXIT_OK


def cmd_sweep_delta(args) -> int:
    deltas = args.deltas
    if args.from_file:
        deltas = [r.delta for r in cost.read_sweep_csv(args.from_file)]
    if deltas is None:
        raise UsageError("--deltas is required")
    model = _model(args)
    rows = cost.cost_vs_spacing(model, args.n, args.p1, deltas, args.method, args.workers)
    path = _out_path(args, "sweep_delta.csv")
    cost.write_sweep_csv(rows, path)
    _sidecar(args, path, {"model": model.to_dict()})
    print(path)
    return EXIT_OK


def cmd_sweep_fc(args) -> int:
    fcs, deltas = args.fcs, args.deltas
    if args.from_file:
        with open(args.from_file, newline="") as fh:
            recs = list(csv.DictReader(fh))
        fcs = sorted({float(r["fc_hz"]) for r in recs})
        deltas = sorted({int(r["delta"]) for r in recs})
    path = _out_path(args, "sweep_fc.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fc_hz", "delta", "n_pilots", "j_pct", "method"])
        for fc in fcs:
            for row in cost.cost_vs_spacing(planner.model_for_fc(fc), args.n, args.p1, deltas, args.method):
                w.writerow(["%.9g" % fc, row.delta, row.n_pilots, "%.9g" % row.j_pct,
                            row.method if not row.error else f"error: {row.error}"])
    _sidecar(args, path)
    print(path)
    return EXIT_OK


def cmd_sweep_ab(args) -> int:
    a_vals, b_vals = args.a_values, args.b_values
    if args.from_file:
        with open(args.from_file, newline="") as fh:
            recs = list(csv.DictReader(fh))
        a_vals = list(dict.fromkeys(float(r["a"]) for r in recs))
        b_vals = list(dict.fromkeys(float(r["b"]) for r in recs))
    pattern = _pattern(args)
    path = _out_path(args, "sweep_ab.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a", "b", "j_pct", "method"])
        for a in a_vals:
            for b in b_vals:
                r = cost.evaluate(expmodel.ExpModel(a, b), pattern, args.method)
                w.writerow(["%.9g" % a, "%.9g" % b, "%.9g" % r.j_pct, r.method])
    _sidecar(args, path)
    print(path)
    return EXIT_OK


def cmd_fit_affine(args) -> int:
    if args.from_file:
        with open(args.from_file, newline="") as fh:
            header = next(csv.reader(fh))
        if "omega" in header:
            with open(args.from_file, newline="") as fh:
                recs = list(csv.DictReader(fh))
            coefs = planner.fit_fc_quadratic([float(r["fc_hz"]) for r in recs],
                                             [float(r["omega"]) for r in recs],
                                             [float(r["eta"]) for r in recs])
            path = _out_path(args, "fc_coefs.json")
            _write_json(args, path, {"omega_coef": coefs.omega_coef, "eta_coef": coefs.eta_coef})
            return EXIT_OK
        rows = [r for r in cost.read_sweep_csv(args.from_file) if not r.error]
        fit = planner.fit_affine([r.delta for r in rows], [r.j_pct for r in rows], args.min_r2)
        path = _out_path(args, "affine.json")
        _write_json(args, path, {"omega": fit.omega, "eta": fit.eta, "r2": fit.r2,
                                 "delta_range": list(fit.delta_range)})
        return EXIT_OK

    path = _out_path(args, "affine_fits.csv")
    fits = []
    for fc in args.fcs:
        rows = cost.cost_vs_spacing(planner.model_for_fc(fc), args.n, args.p1, args.deltas, args.method)
        fits.append((fc, planner.fit_affine([r.delta for r in rows], [r.j_pct for r in rows], args.min_r2)))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fc_hz", "omega", "eta", "r2"])
        for fc, f in fits:
            w.writerow(["%.9g" % fc, "%.9g" % f.omega, "%.9g" % f.eta, "%.9g" % f.r2])
    coefs = planner.fit_fc_quadratic([fc for fc, _ in fits], [f.omega for _, f in fits],
                                     [f.eta for _, f in fits])
    cpath = path.with_name("fc_coefs.json")
    coefs.save(cpath)
    _sidecar(args, path)
    _sidecar(args, cpath)
    print(path)
    print(cpath)
    return EXIT_OK


_PLAN_KEYS = ("fc_hz", "n_total", "max_cost_pct", "delta0", "omega", "eta")


def cmd_plan(args) -> int:
    if args.from_file:
        doc = _read_json(args.from_file)
        kw = {k: doc[k] for k in _PLAN_KEYS}
        exact = doc.get("method") == "affine+exact"
        kw["n_total"] = int(kw["n_total"])
        kw["delta0"] = int(kw["delta0"])
    else:
        for flag in ("fc", "max_cost", "delta0"):
            if getattr(args, flag) is None:
                raise UsageError(f"--{flag.replace('_', '-')} is required")
        kw = dict(fc_hz=args.fc, n_total=args.n, max_cost_pct=args.max_cost, delta0=args.delta0,
                  omega=args.omega, eta=args.eta)
        exact = args.exact_refine
    coefs = planner.FcCoefficients.load(args.coefs) if args.coefs else None
    result = planner.plan(**kw, coefs=coefs, exact_refine=exact, p1=args.p1)
    path = _out_path(args, "plan.json")
    _write_json(args, path, result.to_dict())
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.from_file:
        doc = _read_json(args.from_file)
        inp = doc["inputs"]
        pattern = wiener.PilotPattern(**inp["pattern"])
        model = expmodel.ExpModel.from_dict(inp["model"]) if inp.get("model") else None
        psd = pncore.PsdSpec.from_dict(inp["psd"]) if inp.get("psd") else None
        sc = chainsim.SimScenario(pattern, inp["trials"], inp["seed"], inp["mode"], model, psd,
                                  inp["carrier_hz"], inp["fs_hz"], inp.get("snr_db"))
    else:
        pattern = _pattern(args)
        psd = model = None
        if args.mode == "surrogate":
            model = _model(args)
        else:
            psd = pncore.load_psd(args.psd) if args.psd else pncore.default_psd()
            if args.a is not None or args.model is not None:
                model = _model(args)
        carrier = args.fc if args.fc is not None else 100e9
        sc = chainsim.SimScenario(pattern, args.trials, _seed(args), args.mode, model, psd,
                                  carrier, args.fs, args.snr_db)
    result = chainsim.run(sc)
    payload = result.to_dict()
    payload["inputs"] = {
        "pattern": {"n_total": sc.pattern.n_total, "p1": sc.pattern.p1, "delta": sc.pattern.delta,
                    "n_pilots": sc.pattern.n_pilots},
        "model": sc.model.to_dict() if sc.model else None,
        "psd": sc.psd.to_dict() if sc.psd else None,
        "trials": sc.trials, "seed": sc.seed, "mode": sc.mode,
        "carrier_hz": sc.carrier_hz, "fs_hz": sc.fs_hz, "snr_db": sc.snr_db,
    }
    path = _out_path(args, "simulate.json")
    _write_json(args, path, payload)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default="./out", help="directory for outputs (default ./out)")
    common.add_argument("--out", help="output file name inside --out-dir")
    common.add_argument("--seed", type=int, default=0, help="master seed (PTRS_SEED overrides)")
    common.add_argument("--verbose", action="store_true")

    parser = _Parser(prog="ptrsplan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(func=func)
        return p

    def add_synth_source(p):
        p.add_argument("--psd", type=Path, help="PSD JSON (default: shipped configuration)")
        p.add_argument("--fc", type=float, default=100e9, help="carrier in Hz")
        p.add_argument("--fs", type=float, default=pncore.DEFAULT_FS_HZ, help="sample rate in Hz")
        p.add_argument("--n", type=int, default=pncore.DEFAULT_N, help="samples per trace")
        p.add_argument("--count", type=int, default=1, help="number of traces")

    p = add("synth", cmd_synth, "synthesize phase-noise traces from a PSD")
    add_synth_source(p)
    p.add_argument("--format", choices=("bin", "csv"), default="bin")

    p = add("autocorr", cmd_autocorr, "empirical autocorrelation of traces")
    add_synth_source(p)
    p.add_argument("--traces", nargs="+", type=Path, help="trace files (bin or csv); synthesizes if absent")
    p.add_argument("--max-lag", type=int)

    p = add("fit", cmd_fit, "fit the exponential model to an autocorrelation CSV")
    p.add_argument("--from-file", type=Path, required=True, help="autocorrelation CSV")
    p.add_argument("--lag-range", help="lo:hi lags to fit (default 0:len/4)")
    p.add_argument("--fc", type=float, help="carrier to record with the model")

    p = add("coeffs", cmd_coeffs, "Wiener interpolation coefficients")
    _add_model_args(p)
    _add_pattern_args(p)
    p.add_argument("--method", choices=("closed", "numeric"), default="closed")
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    p.add_argument("--from-file", type=Path, help="re-emit a coefficient file in another format")

    p = add("cost", cmd_cost, "global cost J for one pattern")
    _add_model_args(p)
    _add_pattern_args(p)
    p.add_argument("--method", choices=cost.METHODS, help="default boxed")
    p.add_argument("--variant", choices=cost.VARIANTS, help="default corrected")
    p.add_argument("--terms", action="store_true", help="include the closed-form sums")
    p.add_argument("--debug-local", action="store_true", help="also dump per-position J_n")
    p.add_argument("--from-file", type=Path, help="re-run from a cost JSON")

    p = add("sweep-delta", cmd_sweep_delta, "J against pilot spacing")
    _add_model_args(p)
    _add_pattern_args(p, delta=False)
    p.add_argument("--deltas", type=_int_range, help="spacings, lo:hi:step inclusive")
    p.add_argument("--method", choices=cost.METHODS, default="boxed")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--from-file", type=Path, help="reuse the spacings of a sweep CSV")

    p = add("sweep-fc", cmd_sweep_fc, "J against carrier frequency for several spacings")
    _add_pattern_args(p, delta=False)
    p.add_argument("--fcs", type=_float_range, default=_float_range("100e9:300e9:10e9"))
    p.add_argument("--deltas", type=_int_range, default=_int_range("10:50:10"))
    p.add_argument("--method", choices=cost.METHODS, default="boxed")
    p.add_argument("--from-file", type=Path, help="reuse the grid of a sweep-fc CSV")

    p = add("sweep-ab", cmd_sweep_ab, "J over a grid of (a, b)")
    _add_pattern_args(p)
    p.set_defaults(delta=50, p1=25)
    p.add_argument("--a-values", type=_float_range, default=_float_range("0.007:0.008:0.0001"))
    p.add_argument("--b-values", type=_float_range, default=_float_range("0.8:0.99:0.01"))
    p.add_argument("--method", choices=cost.METHODS, default="boxed")
    p.add_argument("--from-file", type=Path, help="reuse the grid of a sweep-ab CSV")

    p = add("fit-affine", cmd_fit_affine, "affine fits of J(delta) and their carrier model")
    _add_pattern_args(p, delta=False)
    p.add_argument("--fcs", type=_float_range, default=_float_range("100e9:300e9:50e9"))
    p.add_argument("--deltas", type=_int_range, default=_int_range("1:109:12"))
    p.add_argument("--method", choices=cost.METHODS, default="boxed")
    p.add_argument("--min-r2", type=float, default=planner.MIN_R2)
    p.add_argument("--from-file", type=Path, help="sweep-delta CSV, or an affine_fits CSV to refit")

    p = add("plan", cmd_plan, "maximum pilot spacing under a cost ceiling")
    p.add_argument("--fc", type=float, help="carrier in Hz")
    p.add_argument("--n", type=int, default=pncore.DEFAULT_N)
    p.add_argument("--max-cost", type=float, help="cost ceiling in %% of N")
    p.add_argument("--delta0", type=int, help="minimum spacing")
    p.add_argument("--omega", type=float, help="override the slope (%% of N per sample)")
    p.add_argument("--eta", type=float, help="override the intercept (%% of N)")
    p.add_argument("--coefs", type=Path, help="carrier coefficients JSON from fit-affine")
    p.add_argument("--exact-refine", action="store_true", help="check the answer against the exact cost")
    p.add_argument("--p1", type=int, default=1)
    p.add_argument("--from-file", type=Path, help="re-run from a plan JSON")

    p = add("simulate", cmd_simulate, "Monte-Carlo tracking error on one symbol")
    _add_model_args(p)
    _add_pattern_args(p)
    p.add_argument("--mode", choices=chainsim.MODES, default="surrogate")
    p.add_argument("--psd", type=Path)
    p.add_argument("--fs", type=float, default=pncore.DEFAULT_FS_HZ)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--snr-db", type=float, help="noise on data symbols only (demo)")
    p.add_argument("--from-file", type=Path, help="re-run from a simulate JSON")

    known = set(sub.choices)
    for sp in sub.choices.values():
        known.update(sp._option_string_actions)
    _Parser.known = sorted(known)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ptrsplan {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"ptrsplan {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
