"""Command-line entry point: figure data, engine runs and oracle checks.

Every output file starts with comment lines holding the package version and
the resolved parameters; rows are sorted before writing so that repeated runs
with the same inputs are byte-identical.

Exit codes: 0 ok, 1 acceptance failure, 2 usage or configuration error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .errors import InvalidParameter, NumericalFailure
from .model import ModelConfig, beta_critical, beta_of_theta, config_from_mapping, load_config, theta_of_beta

log = logging.getLogger("hierflow")

EXIT_OK, EXIT_ACCEPT, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

SIGMA2_RANGE = (20.0, 40.0)
SIGMA2_STEPS = 200
SURFACE_BETA = (20.0, 40.0)
SURFACE_ALPHA = (0.0, 0.4)
SURFACE_STEPS = 40
VSTAR_THETAS = (0.501, 0.6, 0.84)
JUMP_BAND = (0.006, 0.009)


# --------------------------------------------------------------------------
# output helpers
# --------------------------------------------------------------------------

def header(params: dict) -> str:
    return f"# hierflow {__version__}\n# params: {json.dumps(params, sort_keys=True)}\n"


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def csv_text(params: dict, columns: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return header(params) + buf.getvalue()


def json_text(params: dict, payload: dict) -> str:
    return json.dumps({"version": __version__, "params": params, "result": payload},
                      indent=1, sort_keys=True, default=float) + "\n"


def read_csv(text: str):
    """(columns, rows of floats) from a file written by csv_text."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    r = list(csv.reader(lines))
    return r[0], [[float(v) for v in row] for row in r[1:]]


def emit(text: str, out: str | None):
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    d = os.path.dirname(os.path.abspath(out))
    os.makedirs(d, exist_ok=True)
    with open(out, "w") as fh:
        fh.write(text)


def pmap(fn, items, threads: int):
    """Order-preserving map, optionally over a process pool."""
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * threads))))


# --------------------------------------------------------------------------
# sigma^2 scan
# --------------------------------------------------------------------------

def _sigma2_row(args):
    b, beta = args
    from .observables import sigma2
    try:
        return beta, sigma2(b, beta), ""
    except (NumericalFailure, InvalidParameter) as e:
        return beta, float("nan"), str(e).replace(",", ";")


def sigma2_scan(b: int = 2, beta_range=SIGMA2_RANGE, steps: int = SIGMA2_STEPS, threads: int = 1):
    """Rows (beta, sigma2, dsigma2_dbeta, status); derivatives are centered differences."""
    if steps < 3:
        raise InvalidParameter("sigma2 scan needs at least 3 points")
    betas = np.linspace(beta_range[0], beta_range[1], steps)
    res = pmap(_sigma2_row, [(b, float(x)) for x in betas], threads)
    s = np.array([r[1] for r in res])
    d = np.gradient(s, betas)
    rows = [(r[0], r[1], float(dd), r[2] or "ok") for r, dd in zip(res, d)]
    for r in rows:
        if r[3] != "ok":
            log.warning("sigma2 failed at beta=%g: %s", r[0], r[3])
    return sorted(rows, key=lambda r: r[0])


def sigma2_jump(betas, sig, b: int, width: float = 2.0) -> float:
    """Jump of d sigma^2/d beta at beta_c from scan data.

    Below beta_c the derivative is -1/beta^2 exactly, so the jump equals the
    right derivative of 1/beta - sigma^2 at beta_c, estimated by a
    least-squares fit a x + c x^2 on the rows with 0 < x = beta - beta_c <= width.
    """
    betas, sig = np.asarray(betas, float), np.asarray(sig, float)
    bc = beta_critical(b)
    x = betas - bc
    m = (x > 0) & (x <= width) & np.isfinite(sig)
    if m.sum() < 3:
        raise InvalidParameter("scan has too few points just above beta_c")
    y = 1 / betas[m] - sig[m]
    A = np.vstack([x[m], x[m] ** 2]).T
    return float(np.linalg.lstsq(A, y, rcond=None)[0][0])


# --------------------------------------------------------------------------
# kappa / t_star surfaces
# --------------------------------------------------------------------------

def _surface_column(args):
    b, beta, alphas = args
    from .observables import (_fixed_point_for, kappa_exponent, kappa_from_fixed_point, sigma2_from_star,
                              star_data, supercritical)
    rows = []
    theta = theta_of_beta(beta)
    try:
        if not supercritical(b, beta):
            fp = None
            s2 = 1 / beta
        else:
            fp = _fixed_point_for(b, beta)
            s2 = sigma2_from_star(star_data(fp))
    except NumericalFailure as e:
        return [(a, beta, theta, math.nan, math.nan, math.nan, math.nan, math.nan, str(e)) for a in alphas]
    for a in alphas:
        try:
            ce = kappa_exponent(a, b, beta) if fp is None else kappa_from_fixed_point(a, fp)
            rows.append((a, beta, theta, ce.t_star, math.log(ce.t_star), ce.kappa, ce.tau, s2, "ok"))
        except NumericalFailure as e:
            rows.append((a, beta, theta, math.nan, math.nan, math.nan, math.nan, s2, str(e)))
    return rows


SURFACE_COLUMNS = ["alpha", "beta", "theta", "t_star", "log_t_star", "kappa", "tau", "sigma2", "status"]


def kappa_surface(b: int = 2, beta_range=SURFACE_BETA, alpha_range=SURFACE_ALPHA,
                  steps: int = SURFACE_STEPS, alpha_steps: int | None = None, threads: int = 1):
    if alpha_range[0] < 0 or alpha_range[1] >= 0.5:
        raise InvalidParameter("alpha range must lie in [0, 1/2)")
    betas = np.linspace(beta_range[0], beta_range[1], steps)
    alphas = [float(a) for a in np.linspace(alpha_range[0], alpha_range[1], alpha_steps or steps)]
    cols = pmap(_surface_column, [(b, float(x), alphas) for x in betas], threads)
    rows = [r for col in cols for r in col]
    for r in rows:
        if r[-1] != "ok":
            log.warning("surface cell (alpha=%g, beta=%g) failed: %s", r[0], r[1], r[-1])
    return sorted(rows, key=lambda r: (r[0], r[1]))


def tstar_surface(b: int = 2, btheta_range=(1.001, 1.2), alpha_range=SURFACE_ALPHA,
                  steps: int = SURFACE_STEPS, alpha_steps: int | None = None, threads: int = 1):
    """Same columns as kappa_surface on a grid of b*theta values above 1."""
    if btheta_range[0] <= 1:
        raise InvalidParameter("b*theta range must lie above 1")
    bt = np.linspace(btheta_range[0], btheta_range[1], steps)
    betas = [beta_of_theta(x / b) for x in bt]
    alphas = [float(a) for a in np.linspace(alpha_range[0], alpha_range[1], alpha_steps or steps)]
    cols = pmap(_surface_column, [(b, float(x), alphas) for x in betas], threads)
    return sorted([r for col in cols for r in col], key=lambda r: (r[0], r[1]))


# --------------------------------------------------------------------------
# v_star profiles
# --------------------------------------------------------------------------

def vstar_profile(b: int = 2, thetas=VSTAR_THETAS, grid_size: int = 512):
    """(z, {theta: exp(-v_star) or None}, {theta: status})."""
    from .rgflow import fixed_point, grid, v_star
    z = grid(grid_size)
    curves, status = {}, {}
    for th in thetas:
        if b * th <= 1:
            curves[th], status[th] = None, "b*theta <= 1"
            continue
        try:
            fp = fixed_point(b, th)
            vs, _ = v_star(fp, grid_size)
            curves[th] = np.exp(-vs.values)
            status[th] = f"ok iterations={fp.iterations} residual={fp.residual:.3e}"
        except NumericalFailure as e:
            curves[th], status[th] = None, f"not converged: {e}"
            log.warning("v_star at theta=%g: %s", th, status[th])
    return z, curves, status


def vstar_rows(z, curves):
    cols = ["z"] + [f"exp_neg_vstar_{th:g}" for th in curves]
    rows = []
    for i, zz in enumerate(z):
        rows.append([zz] + [c[i] if c is not None else math.nan for c in curves.values()])
    return cols, rows


# --------------------------------------------------------------------------
# all figures
# --------------------------------------------------------------------------

def _check(name, ok, detail):
    return {"check": name, "pass": bool(ok), "detail": detail}


def run_all_figures(out_dir: str, b: int = 2, threads: int = 1, steps: int = SIGMA2_STEPS,
                    surface_steps: int = SURFACE_STEPS) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"version": __version__, "b": b, "outputs": [], "checks": []}
    checks = manifest["checks"]
    bc = beta_critical(b)

    t0 = time.perf_counter()
    rows = sigma2_scan(b, SIGMA2_RANGE, steps, threads)
    p = {"command": "sigma2-scan", "b": b, "beta_range": list(SIGMA2_RANGE), "steps": steps}
    emit(csv_text(p, ["beta", "sigma2", "dsigma2_dbeta", "status"], rows), os.path.join(out_dir, "sigma2_scan.csv"))
    betas = np.array([r[0] for r in rows])
    sig = np.array([r[1] for r in rows])
    jump = sigma2_jump(betas, sig, b)
    sub = betas < bc
    checks.append(_check("sigma2 = 1/beta below beta_c", np.all(sig[sub] == 1 / betas[sub]), ""))
    checks.append(_check("sigma2 < 1/beta at top of range", sig[-1] < 1 / betas[-1], f"{float(sig[-1])!r}"))
    checks.append(_check("sigma2 derivative jump in band", JUMP_BAND[0] <= jump <= JUMP_BAND[1], f"{jump!r}"))
    checks.append(_check("sigma2 non-increasing", np.all(np.diff(sig) <= 1e-12), ""))
    manifest["outputs"].append({"file": "sigma2_scan.csv", "seconds": round(time.perf_counter() - t0, 3)})

    t0 = time.perf_counter()
    rows = kappa_surface(b, SURFACE_BETA, SURFACE_ALPHA, surface_steps, threads=threads)
    p = {"command": "kappa-surface", "b": b, "beta_range": list(SURFACE_BETA),
         "alpha_range": list(SURFACE_ALPHA), "steps": surface_steps}
    emit(csv_text(p, SURFACE_COLUMNS, rows), os.path.join(out_dir, "kappa_surface.csv"))
    ok = [r for r in rows if r[-1] == "ok"]
    checks.append(_check("surface cells all evaluated", len(ok) == len(rows), f"{len(ok)}/{len(rows)}"))
    checks.append(_check("kappa = 0 at alpha = 0", all(r[5] == 0 for r in ok if r[0] == 0), ""))
    checks.append(_check("log t_star = 0 below beta_c", all(r[4] == 0 for r in ok if r[1] < bc), ""))
    checks.append(_check("subcritical kappa closed form",
                         all(abs(r[5] - 4 * bc * r[0] ** 2 / r[1]) <= 1e-15 * max(1, r[5]) for r in ok if r[1] < bc), ""))
    checks.append(_check("supercritical kappa below the closed form",
                         all(r[5] < 4 * bc * r[0] ** 2 / r[1] for r in ok if r[1] > bc and r[0] > 0), ""))
    manifest["outputs"].append({"file": "kappa_surface.csv", "seconds": round(time.perf_counter() - t0, 3)})

    t0 = time.perf_counter()
    z, curves, status = vstar_profile(b, VSTAR_THETAS)
    cols, vrows = vstar_rows(z, curves)
    p = {"command": "vstar-profile", "b": b, "thetas": list(VSTAR_THETAS), "status": {f"{k:g}": v for k, v in status.items()}}
    emit(csv_text(p, cols, vrows), os.path.join(out_dir, "vstar_profile.csv"))
    manifest["vstar_status"] = {f"{k:g}": v for k, v in status.items()}
    c0 = curves.get(VSTAR_THETAS[0])
    if c0 is not None:
        checks.append(_check("exp(-v_star) near 1 at theta=0.501", np.max(np.abs(c0 - 1)) < 0.07,
                             f"{float(np.max(np.abs(c0 - 1)))!r}"))
    else:
        checks.append(_check("exp(-v_star) near 1 at theta=0.501", False, status[VSTAR_THETAS[0]]))
    sym = max(float(np.max(np.abs(c - np.roll(c[::-1], 1)))) for c in curves.values() if c is not None)
    checks.append(_check("v_star profiles even", sym < 1e-10, f"{sym!r}"))
    manifest["outputs"].append({"file": "vstar_profile.csv", "seconds": round(time.perf_counter() - t0, 3)})

    manifest["all_pass"] = all(c["pass"] for c in checks)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


# --------------------------------------------------------------------------
# argument handling
# --------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="INI file with a [model] section")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--out", help="output file (stdout if omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--beta", type=float)
    p.add_argument("--b", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--q-max", type=int, dest="q_max")
    p.add_argument("--grid", type=int, dest="grid_size")
    p.add_argument("--measure", help="dg, sine_gordon(k), hard_core(z) or custom(a1,...)")
    p.add_argument("--sigma-profile", dest="sigma_profile", help="constant, massive(m2) or custom(...)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hierflow", description="Hierarchical integer-valued field RG toolkit")
    ap.add_argument("--version", action="version", version=f"hierflow {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in [
        ("flow", "coefficient flow lam_k, k = 0..n"),
        ("fixed-point", "supercritical fixed point lam_star for b*theta > 1"),
        ("sigma2-scan", "sigma^2(beta) on a beta grid"),
        ("kappa-surface", "kappa and log t_star on an (alpha, beta) grid"),
        ("tstar-surface", "t_star on an (alpha, b*theta) grid above criticality"),
        ("vstar-profile", "exp(-v_star) on the circle for several theta"),
        ("covariance", "exact pair covariance and martingale table per branch depth"),
        ("charge", "exact fractional-charge correlations per branch depth"),
        ("sample", "Monte Carlo pair estimators or a full field sample"),
        ("oracle-check", "compare the chain engine with exhaustive Gibbs sums"),
        ("all-figures", "write all figure data files and a manifest"),
    ]:
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "sigma2-scan":
            p.add_argument("--beta-min", type=float, default=SIGMA2_RANGE[0])
            p.add_argument("--beta-max", type=float, default=SIGMA2_RANGE[1])
            p.add_argument("--steps", type=int, default=SIGMA2_STEPS)
        if name in ("kappa-surface", "tstar-surface"):
            lo, hi = (SURFACE_BETA if name == "kappa-surface" else (1.001, 1.2))
            p.add_argument("--min", type=float, default=lo, dest="axis_min")
            p.add_argument("--max", type=float, default=hi, dest="axis_max")
            p.add_argument("--alpha-min", type=float, default=SURFACE_ALPHA[0])
            p.add_argument("--alpha-max", type=float, default=SURFACE_ALPHA[1])
            p.add_argument("--steps", type=int, default=SURFACE_STEPS)
            p.add_argument("--alpha-steps", type=int)
        if name == "vstar-profile":
            p.add_argument("--thetas", default=",".join(f"{t:g}" for t in VSTAR_THETAS))
        if name == "sample":
            p.add_argument("--samples", type=int, default=100_000)
            p.add_argument("--depth", type=int, help="branch depth k (all depths if omitted)")
            p.add_argument("--field", action="store_true", help="write one full field instead")
        if name == "oracle-check":
            p.add_argument("--q-site", type=int, default=6)
            p.add_argument("--tol", type=float, default=1e-4)
            p.add_argument("--cache", help="directory for cached Gibbs sums")
        if name == "all-figures":
            p.add_argument("--steps", type=int, default=SIGMA2_STEPS)
            p.add_argument("--surface-steps", type=int, default=SURFACE_STEPS)
    return ap


def resolve_config(args, default_beta: float = 20.0, default_n: int = 8) -> ModelConfig:
    over = {k: getattr(args, k) for k in ("b", "beta", "n", "q_max", "grid_size", "seed",
                                           "measure", "sigma_profile")}
    if args.theta is not None:
        if args.beta is not None:
            raise InvalidParameter("give either --beta or --theta, not both")
        over["beta"] = beta_of_theta(args.theta)
    if args.config:
        return load_config(args.config, **over)
    raw = {"beta": default_beta, "n": default_n}
    raw.update({k: v for k, v in over.items() if v is not None})
    return config_from_mapping(raw)


def _b(args) -> int:
    if args.config:
        return resolve_config(args).b
    return args.b or 2


def cmd_flow(args):
    from .rgflow import run_flow
    cfg = resolve_config(args)
    tr = run_flow(cfg)
    body = tr.to_csv()
    emit(header({"command": "flow", **cfg.describe()}) + body, args.out)
    return EXIT_OK


def cmd_fixed_point(args):
    from .rgflow import fixed_point, fixed_point_bounds_hold, near_critical_lam1
    b = _b(args)
    if args.theta is not None and args.beta is not None:
        raise InvalidParameter("give either --beta or --theta, not both")
    if args.theta is not None:
        theta = args.theta
    elif args.beta is not None:
        theta = theta_of_beta(args.beta)
    elif args.config:
        theta = resolve_config(args).theta
    else:
        raise InvalidParameter("fixed-point needs --theta or --beta")
    fp = fixed_point(b, theta, q_max=args.q_max)
    g, e = fixed_point_bounds_hold(fp)
    payload = {"b": b, "theta": theta, "beta": fp.beta, "b_theta": b * theta, "trivial": fp.trivial,
               "residual": fp.residual, "iterations": fp.iterations, "newton_steps": fp.newton_steps,
               "lam": [float(x) for x in fp.lam.lam], "lam1": fp.lam.lam1,
               "lam1_near_critical": near_critical_lam1(b, theta),
               "gaussian_bound": g, "envelope_bound": e}
    emit(json_text({"command": "fixed-point", "b": b, "theta": theta}, payload), args.out)
    return EXIT_OK


def cmd_sigma2_scan(args):
    b = _b(args)
    rows = sigma2_scan(b, (args.beta_min, args.beta_max), args.steps, args.threads)
    p = {"command": "sigma2-scan", "b": b, "beta_range": [args.beta_min, args.beta_max], "steps": args.steps}
    emit(csv_text(p, ["beta", "sigma2", "dsigma2_dbeta", "status"], rows), args.out)
    return EXIT_OK if all(r[3] == "ok" for r in rows) else EXIT_NUMERIC


def cmd_surface(args):
    b = _b(args)
    rng = (args.alpha_min, args.alpha_max)
    if args.command == "kappa-surface":
        rows = kappa_surface(b, (args.axis_min, args.axis_max), rng, args.steps, args.alpha_steps, args.threads)
    else:
        rows = tstar_surface(b, (args.axis_min, args.axis_max), rng, args.steps, args.alpha_steps, args.threads)
    p = {"command": args.command, "b": b, "axis_range": [args.axis_min, args.axis_max],
         "alpha_range": list(rng), "steps": args.steps, "alpha_steps": args.alpha_steps or args.steps}
    emit(csv_text(p, SURFACE_COLUMNS, rows), args.out)
    return EXIT_OK if all(r[-1] == "ok" for r in rows) else EXIT_NUMERIC


def cmd_vstar(args):
    b = _b(args)
    try:
        thetas = tuple(float(t) for t in args.thetas.split(","))
    except ValueError as e:
        raise InvalidParameter(f"bad --thetas: {e}") from e
    z, curves, status = vstar_profile(b, thetas, args.grid_size or 512)
    cols, rows = vstar_rows(z, curves)
    p = {"command": "vstar-profile", "b": b, "thetas": list(thetas), "status": {f"{k:g}": v for k, v in status.items()}}
    emit(csv_text(p, cols, rows), args.out)
    return EXIT_OK if all(c is not None for c in curves.values()) else EXIT_NUMERIC


def cmd_covariance(args):
    from .chain import covariance_exact, gaussian_ladder, solve_chain
    cfg = resolve_config(args)
    sol = solve_chain(cfg)
    cov = covariance_exact(cfg, sol=sol)
    gauss = gaussian_ladder(cfg)
    rows = [(k, cov[k], gauss[k]) for k in range(cfg.n + 1)]
    emit(csv_text({"command": "covariance", **cfg.describe()}, ["k", "covariance", "gaussian"], rows), args.out)
    return EXIT_OK


def cmd_charge(args):
    from .chain import charge_correlation_exact, single_charge_exact, solve_chain
    cfg = resolve_config(args)
    alpha = 0.3 if args.alpha is None else args.alpha
    sol = solve_chain(cfg)
    ch = charge_correlation_exact(cfg, alpha, sol=sol)
    single = single_charge_exact(cfg, alpha, sol.flow)
    p = {"command": "charge", "alpha": alpha, "single_charge": single, **cfg.describe()}
    emit(csv_text(p, ["k", "charge_correlation"], [(k, ch[k]) for k in range(cfg.n + 1)]), args.out)
    return EXIT_OK


def cmd_sample(args):
    from .sampler import ChainSampler, field_to_csv, sample_field, sample_pair
    cfg = resolve_config(args)
    seed = cfg.seed
    s = ChainSampler(cfg)
    if args.field:
        vals = sample_field(cfg, seed, sampler=s)
        emit(header({"command": "sample", "field": True, **cfg.describe()}) + field_to_csv(vals), args.out)
        return EXIT_OK
    alpha = 0.3 if args.alpha is None else args.alpha
    depths = range(cfg.n + 1) if args.depth is None else [args.depth]
    rows = []
    for k in depths:
        pe = sample_pair(cfg, k, args.samples, seed, alpha, sampler=s)
        rows.append((k, pe.covariance.mean, pe.covariance.se, pe.charge.mean, pe.charge.se,
                     pe.charge_imag.mean, pe.charge_imag.se, args.samples))
    cols = ["k", "covariance", "covariance_se", "charge", "charge_se", "charge_imag", "charge_imag_se", "n_samples"]
    p = {"command": "sample", "alpha": alpha, **cfg.describe()}
    emit(csv_text(p, cols, rows), args.out)
    return EXIT_OK


def cmd_oracle(args):
    from .chain import charge_correlation_exact, covariance_exact, solve_chain
    from .model import leaf_pair
    from .oracle import gibbs_brute
    if not args.config and args.n is None:
        args.n = 2
    if not args.config and args.beta is None and args.theta is None:
        args.beta = 10.0
    cfg = resolve_config(args)
    alphas = (0.1, 0.3) if args.alpha is None else (args.alpha,)
    pairs = [leaf_pair(k, cfg.b, cfg.n) for k in range(cfg.n + 1)]
    g = gibbs_brute(cfg, args.q_site, pairs, alphas, cache_dir=args.cache)
    sol = solve_chain(cfg)
    cov = covariance_exact(cfg, sol=sol)
    rows = []
    worst = 0.0
    for k, pr in enumerate(pairs):
        rows.append(("covariance", k, 0.0, cov[k], g.covariances[pr], abs(cov[k] - g.covariances[pr])))
        for a in alphas:
            c = charge_correlation_exact(cfg, a, k, sol=sol)
            ref = g.charges[(pr[0], pr[1], float(a))]
            rows.append(("charge", k, a, c, ref, abs(c - ref)))
    worst = max(r[-1] for r in rows)
    p = {"command": "oracle-check", "q_site": args.q_site, "tol": args.tol,
         "gibbs_sensitivity": g.sensitivity, "max_abs_diff": worst, **cfg.describe()}
    emit(csv_text(p, ["observable", "k", "alpha", "chain", "gibbs", "abs_diff"], rows), args.out)
    return EXIT_OK if worst <= args.tol else EXIT_ACCEPT


def cmd_all(args):
    out = args.out or "figures"
    m = run_all_figures(out, _b(args), args.threads, args.steps, args.surface_steps)
    for c in m["checks"]:
        log.info("%s %s %s", "PASS" if c["pass"] else "FAIL", c["check"], c["detail"])
    return EXIT_OK if m["all_pass"] else EXIT_ACCEPT


COMMANDS = {
    "flow": cmd_flow, "fixed-point": cmd_fixed_point, "sigma2-scan": cmd_sigma2_scan,
    "kappa-surface": cmd_surface, "tstar-surface": cmd_surface, "vstar-profile": cmd_vstar,
    "covariance": cmd_covariance, "charge": cmd_charge, "sample": cmd_sample,
    "oracle-check": cmd_oracle, "all-figures": cmd_all,
}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except InvalidParameter as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
