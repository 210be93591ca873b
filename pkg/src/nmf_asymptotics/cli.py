"""Command line interface: config ingestion, subcommands and result files.

Exit codes: 0 ok, 1 not certified or a failed check, 2 config error,
3 fixed-point non-convergence.
"""

import argparse
import configparser
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import fixedpoint, predictions, simulate
from .channel import QuadratureScheme
from .errors import ConfigError, NoConvergence, NotConvexCertified, VerificationFailed
from .meanfield import ProblemSpec, check_convexity
from .priors import prior_from_dict

log = logging.getLogger("nmf_asymptotics")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NOCONV = 0, 1, 2, 3

PRIOR_KEYS = {"kind": str, "q": float, "delta2": float, "a": float, "scale": float,
              "nodes": int, "potential": str, "potential_file": str}
SCHEMA = {
    "prior": PRIOR_KEYS,
    "truth": PRIOR_KEYS,
    "model": {"sigma2": float, "alpha": float},
    "quad": {"hermite_nodes": int, "slab": str, "slab_nodes": int, "mc_samples": int,
             "seed": int},
    "fp": {"damping": float, "tol": float, "max_iter": int, "inits": str},
    "sim": {"n": int, "p": int, "seed": int, "design": str, "replicates": int,
            "grad_tol": float, "max_iter": int, "channel_samples": int, "projections": int},
    "coverage": {"zetas": str},
    "sweep": {"axis": str, "grid": str, "metrics": str, "svg": str},
}
DEFAULTS = {
    "model": {"sigma2": 1.0, "alpha": 1.0},
    "quad": {"hermite_nodes": 61, "slab": "hermite", "slab_nodes": 61, "mc_samples": 20000,
             "seed": 0},
    "fp": {"damping": 0.5, "tol": 1e-9, "max_iter": 500},
    "sim": {"n": 4000, "seed": 0, "design": "gaussian", "replicates": 1, "grad_tol": 1e-8,
            "max_iter": 5000, "channel_samples": 100000, "projections": 128},
    "coverage": {"zetas": "0.05"},
    "sweep": {"axis": "alpha", "grid": "", "metrics": "mse,coverage_95"},
}
SWEEP_AXES = ("q", "delta2", "alpha")
CSV_COLUMNS = ("axis_value", "b_star", "tau_star", "mse", "neg_log_z", "coverage_95",
               "converged", "multi_start_agreement")


def _floats(text):
    return [float(s) for s in text.replace(",", " ").split()]


def _from_json(text):
    """Rebuild INI text from the ``config`` block embedded in a result file."""
    cfg = json.loads(text)["config"]
    lines = []
    for section in SCHEMA:
        if section == "truth" and cfg.get("truth_is_prior", False):
            continue
        if section in cfg:
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in cfg[section].items() if v is not None]
    return "\n".join(lines) + "\n"


def load_config(path=None, text=None):
    """Parse and type-check a config; returns the fully resolved nested dict.

    Besides INI files, the JSON output of any subcommand is accepted; its
    embedded resolved config is used.
    """
    cp = configparser.ConfigParser(interpolation=None)
    try:
        if text is None and path is not None:
            with open(path) as fh:
                text = fh.read()
        if text is not None and text.lstrip().startswith("{"):
            text = _from_json(text)
        if text is not None:
            cp.read_string(text)
    except (OSError, configparser.Error, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    cfg = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        cfg[section] = {}
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            try:
                cfg[section][key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc
    return resolve(cfg)


def resolve(cfg):
    if "prior" not in cfg or "kind" not in cfg["prior"]:
        raise ConfigError("[prior] kind is required")
    out = {"prior": dict(cfg["prior"])}
    out["truth"] = dict(cfg["truth"]) if "truth" in cfg else dict(cfg["prior"])
    out["truth_is_prior"] = "truth" not in cfg
    for section, defaults in DEFAULTS.items():
        merged = dict(defaults)
        merged.update(cfg.get(section, {}))
        out[section] = merged
    if "inits" in cfg.get("fp", {}):
        out["fp"]["inits"] = cfg["fp"]["inits"]
    return out


def _prior(section):
    try:
        return prior_from_dict(section)
    except (KeyError, ValueError, OSError) as exc:
        raise ConfigError(f"invalid prior specification {section}: {exc}") from exc


def build_problem(cfg):
    prior = _prior(cfg["prior"])
    truth = prior if cfg.get("truth_is_prior", False) else _prior(cfg["truth"])
    try:
        return ProblemSpec(prior, truth, cfg["model"]["sigma2"], cfg["model"]["alpha"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_scheme(cfg):
    q = cfg["quad"]
    try:
        return QuadratureScheme(q["hermite_nodes"], q["slab"], q["slab_nodes"],
                                q["mc_samples"], q["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def fp_options(cfg):
    fp = cfg["fp"]
    opts = {"damping": fp["damping"], "tol": fp["tol"], "max_iter": fp["max_iter"]}
    if fp.get("inits"):
        pairs = []
        for item in fp["inits"].split(","):
            try:
                b0, t0 = item.split(":")
                pairs.append((float(b0), float(t0)))
            except ValueError as exc:
                raise ConfigError(f"fp.inits entries must be b:tau, got {item!r}") from exc
        opts["inits"] = pairs
    return opts


def sim_config(cfg):
    s = cfg["sim"]
    try:
        return simulate.SimConfig(
            n=s["n"], p=s.get("p"), seed=s["seed"], design=s["design"],
            replicates=s["replicates"], grad_tol=s["grad_tol"], max_iter=s["max_iter"],
            zeta_list=tuple(zetas(cfg)), channel_samples=s["channel_samples"],
            projections=s["projections"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def zetas(cfg):
    try:
        vals = _floats(cfg["coverage"]["zetas"])
    except ValueError as exc:
        raise ConfigError("coverage.zetas must be a list of numbers") from exc
    if not vals or not all(0 < z < 1 for z in vals):
        raise ConfigError("coverage.zetas must lie in (0, 1)")
    return vals


def _clean(obj):
    """Make a result JSON-safe (tuples to lists, non-finite floats to null)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _emit(text, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def emit_json(payload, out):
    _emit(json.dumps(_clean(payload), indent=2, allow_nan=False) + "\n", out)


def _solve(problem, scheme, cfg, threads):
    return fixedpoint.solve(problem, scheme, threads=threads, **fp_options(cfg))


def _require_certified(problem):
    report = check_convexity(problem.prior, problem.sigma2)
    if not report.certified:
        raise NotConvexCertified(
            f"convexity not certified (min F'' = {report.min_F_second:.6g})")
    return report


def cmd_check_convexity(cfg, args):
    problem = build_problem(cfg)
    report = check_convexity(problem.prior, problem.sigma2)
    emit_json({"config": cfg, **report.to_dict()}, args.out)
    return EXIT_OK if report.certified else EXIT_FAILED


def cmd_solve(cfg, args):
    problem, scheme = build_problem(cfg), build_scheme(cfg)
    report = _require_certified(problem)
    sol = _solve(problem, scheme, cfg, args.threads)
    payload = {"config": cfg, "convexity": report.to_dict(), "solution": sol.to_dict()}
    code = EXIT_OK
    try:
        payload["verification"] = fixedpoint.verify(problem, scheme, sol)
    except VerificationFailed as exc:
        payload["verification"] = {"failed": exc.failed, **exc.diagnostics}
        code = EXIT_FAILED
    if not sol.multi_start_agreement:
        payload["warning"] = "fixed-point starts disagree; selected the candidate maximising psi"
    emit_json(payload, args.out)
    return code


def _predict(problem, scheme, cfg, threads):
    _require_certified(problem)
    sol = _solve(problem, scheme, cfg, threads)
    return sol, predictions.predict(problem, sol, scheme, zetas(cfg))


def cmd_predict(cfg, args):
    problem, scheme = build_problem(cfg), build_scheme(cfg)
    sol, pred = _predict(problem, scheme, cfg, args.threads)
    emit_json({"config": cfg, "solution": sol.to_dict(), "predictions": pred.to_dict()},
              args.out)
    return EXIT_OK


def _simulate(problem, scheme, cfg, threads):
    sol, pred = _predict(problem, scheme, cfg, threads)
    results = simulate.run_replicates(problem, sim_config(cfg), sol, threads)
    return sol, pred, results


def cmd_simulate(cfg, args):
    problem, scheme = build_problem(cfg), build_scheme(cfg)
    sol, _, results = _simulate(problem, scheme, cfg, args.threads)
    emit_json({"config": cfg, "solution": sol.to_dict(),
               "results": [r.to_dict() for r in results]}, args.out)
    return EXIT_OK


def _row(predicted, values):
    values = np.asarray(values, float)
    mean = float(values.mean())
    sd = float(values.std(ddof=1)) if values.size > 1 else 0.0
    gap = (mean - predicted) / abs(predicted) if predicted else float("nan")
    return {"predicted": predicted, "empirical_mean": mean, "empirical_sd": sd, "rel_gap": gap}


def compare_report(pred, results):
    report = {
        "mse": _row(pred.mse, [r.mse_emp for r in results]),
        "neg_log_z": _row(pred.neg_log_z_per_p, [r.neg_log_z_nmf_per_p for r in results]),
    }
    for z in pred.zeta_list:
        report[f"coverage_{z:g}"] = _row(pred.coverage[z], [r.coverage_emp[z] for r in results])
        report[f"corrected_coverage_{z:g}"] = _row(
            pred.corrected_coverage[z], [r.coverage_corrected_emp[z] for r in results])
    if results[0].exact_neg_log_z_per_p is not None:
        exact = [r.exact_neg_log_z_per_p for r in results]
        report["exact_neg_log_z"] = {
            "values": exact,
            "elbo_above_exact": all(r.neg_log_z_nmf_per_p > e for r, e in zip(results, exact))}
    report["w2_sliced"] = {"values": [r.w2_sliced for r in results]}
    return report


def cmd_compare(cfg, args):
    problem, scheme = build_problem(cfg), build_scheme(cfg)
    sol, pred, results = _simulate(problem, scheme, cfg, args.threads)
    emit_json({"config": cfg, "solution": sol.to_dict(), "predictions": pred.to_dict(),
               "report": compare_report(pred, results)}, args.out)
    return EXIT_OK


def _sweep_problem(cfg, axis, value):
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in cfg.items()}
    if axis == "alpha":
        cfg["model"]["alpha"] = value
    else:
        cfg["prior"][axis] = value
        if cfg["truth_is_prior"]:
            cfg["truth"][axis] = value
    return cfg


def sweep_point(cfg, axis, value, scheme):
    """One CSV row; uncertified or failed points become NA rows."""
    na = {c: "NA" for c in CSV_COLUMNS}
    na["axis_value"] = value
    try:
        local = _sweep_problem(cfg, axis, value)
        problem = build_problem(local)
        if not check_convexity(problem.prior, problem.sigma2).certified:
            log.warning("sweep point %s=%g is not certified convex", axis, value)
            return na, False
        sol = _solve(problem, scheme, local, 1)
        return {"axis_value": value, "b_star": sol.b_star, "tau_star": sol.tau_star,
                "mse": predictions.predict_mse(problem, sol, scheme),
                "neg_log_z": predictions.predict_neg_log_z(problem, sol, scheme),
                "coverage_95": predictions.predict_coverage(problem, sol, 0.05, scheme),
                "converged": sol.converged,
                "multi_start_agreement": sol.multi_start_agreement}, True
    except (NoConvergence, ConfigError, ValueError, ArithmeticError) as exc:
        log.warning("sweep point %s=%g failed: %s", axis, value, exc)
        return na, False


def sweep_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([r[c] if not isinstance(r[c], float) else repr(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def svg_chart(x, series, xlabel, ylabel="value", width=720, height=480):
    """Minimal line chart; ``series`` maps a label to y values (NaN gaps skipped)."""
    left, right, top, bottom = 70, 150, 30, 60
    pw, ph = width - left - right, height - top - bottom
    x = np.asarray(x, float)
    ys = {k: np.asarray(v, float) for k, v in series.items()}
    finite = np.concatenate([v[np.isfinite(v)] for v in ys.values()] + [np.array([])])
    x0, x1 = (x.min(), x.max()) if x.size else (0.0, 1.0)
    y0, y1 = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + (1 - (v - y0) / (y1 - y0)) * ph

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for k in range(5):
        xv, yv = x0 + k * (x1 - x0) / 4, y0 + k * (y1 - y0) / 4
        out.append(f'<text x="{px(xv):.1f}" y="{top + ph + 18}" font-size="11" '
                   f'text-anchor="middle">{xv:.4g}</text>')
        out.append(f'<text x="{left - 6}" y="{py(yv) + 4:.1f}" font-size="11" '
                   f'text-anchor="end">{yv:.4g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 15}" font-size="13" '
               f'text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="18" y="{top + ph / 2}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 18 {top + ph / 2})">{ylabel}</text>')
    for i, (label, y) in enumerate(ys.items()):
        color = colors[i % len(colors)]
        ok = np.isfinite(y) & np.isfinite(x)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], y[ok]))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = top + 20 * (i + 1)
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly + 4}" font-size="12">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_sweep(cfg, args):
    sw = cfg["sweep"]
    axis = sw["axis"]
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}")
    try:
        grid = _floats(sw["grid"])
    except ValueError as exc:
        raise ConfigError("sweep.grid must be a list of numbers") from exc
    metrics = [m.strip() for m in sw["metrics"].split(",") if m.strip()]
    bad = [m for m in metrics if m not in CSV_COLUMNS[1:6]]
    if bad:
        raise ConfigError(f"unknown sweep metrics {bad}")
    scheme = build_scheme(cfg)
    build_problem(cfg)

    def run(v):
        return sweep_point(cfg, axis, v, scheme)

    if args.threads > 1 and len(grid) > 1:
        with ThreadPoolExecutor(args.threads) as pool:
            results = list(pool.map(run, grid))
    else:
        results = [run(v) for v in grid]
    rows = [r for r, _ in results]
    failures = sum(not ok for _, ok in results)
    if failures:
        log.warning("%d of %d sweep points produced NA rows", failures, len(grid))
    _emit(sweep_csv(rows), args.out)
    svg_path = sw.get("svg") or (os.path.splitext(args.out)[0] + ".svg"
                                 if args.out not in (None, "-") else None)
    if svg_path:
        def num(v):
            return float(v) if v != "NA" else float("nan")
        series = {m: [num(r[m]) for r in rows] for m in metrics}
        with open(svg_path, "w") as fh:
            fh.write(svg_chart(grid, series, axis))
    return EXIT_OK


COMMANDS = {
    "check-convexity": cmd_check_convexity,
    "solve": cmd_solve,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
}


def resolve_threads(flag):
    value = flag
    if value is None:
        env = os.environ.get("NMF_THREADS")
        value = int(env) if env else 1
    if value == 0:
        value = os.cpu_count() or 1
    if value < 0:
        raise ConfigError("threads must be >= 0")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="nmf-asymptotics", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI config file")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--seed", type=int, default=None, help="override sim.seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads, 0 = all cores (env NMF_THREADS)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.threads = resolve_threads(args.threads)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["sim"]["seed"] = args.seed
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotConvexCertified as exc:
        print(f"not certified: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except NoConvergence as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        emit_json({"error": str(exc), "diagnostics": exc.diagnostics}, None)
        return EXIT_NOCONV
    except (AssertionError, VerificationFailed) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
