"""Command-line front end.

Every table is written with ``#`` header lines holding the full run
configuration; numeric output depends only on that configuration, so reruns
(with any ``--threads``) are byte-identical.

Exit codes: 0 success, 2 invalid input, 3 convergence failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .ensemble import EnsembleSpec, sample_channel
from .errors import CapacityError, ConvergenceError, DomainError, NumericError
from .gfunc import GFunction
from .replica import (NoiseSetting, OneRSBOrderParams, RSSolution, bit_error_rate, rs_branches,
                      rsb_solve)
from .simulate import ebn0_to_noise, run_ber, trial_seeds
from .spectrum import (Spectrum, atom_spectrum, binned_density_error, cross_correlation_eigenvalues,
                       empirical_spectrum, ks_distance, kronecker_spectrum, marchenko_pastur_density,
                       mp_edges, toeplitz_limit_spectrum)

EXIT_OK, EXIT_INVALID, EXIT_CONVERGENCE = 0, 2, 3
VOLATILE = ("out", "threads", "func")


# ------------------------------------------------------------------ parsing
def parse_grid(text: str) -> List[float]:
    """``"a,b,c"`` or ``"start:stop:num"`` (inclusive linspace)."""
    text = str(text).strip()
    try:
        if ":" in text:
            a, b, n = text.split(":")
            n = int(n)
            if n < 1:
                raise ValueError
            return [float(v) for v in np.linspace(float(a), float(b), n)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; use 'a,b,c' or 'start:stop:num'")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return None if not math.isfinite(v) else float(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    return v


class Writer:
    """Writes tables and reports into ``--out`` with the config header."""

    def __init__(self, args: argparse.Namespace):
        self.out = args.out
        self.format = args.format
        cfg = {k: v for k, v in vars(args).items() if k not in VOLATILE}
        self.config = _jsonable(cfg)
        self.header = json.dumps(self.config, sort_keys=True)
        self.written: List[str] = []

    def table(self, name: str, columns: Sequence[str], rows: Sequence[Sequence],
              meta: Dict = None, trailer: Sequence[str] = ()):
        os.makedirs(self.out, exist_ok=True)
        meta = meta or {}
        if self.format == "json":
            path = os.path.join(self.out, name + ".json")
            doc = {"config": self.config, "meta": _jsonable(meta), "columns": list(columns),
                   "rows": [_jsonable(list(r)) for r in rows], "trailer": list(trailer)}
            with open(path, "w") as fh:
                json.dump(doc, fh, sort_keys=True, indent=1)
                fh.write("\n")
        else:
            path = os.path.join(self.out, name + ".csv")
            with open(path, "w") as fh:
                fh.write(f"# linvec {self.config.get('command')}\n")
                fh.write(f"# config {self.header}\n")
                for k in sorted(meta):
                    fh.write(f"# {k} {json.dumps(_jsonable(meta[k]))}\n")
                fh.write(",".join(columns) + "\n")
                for r in rows:
                    fh.write(",".join(_fmt(v) for v in r) + "\n")
                for line in trailer:
                    fh.write(f"# {line}\n")
        self.written.append(path)
        return path

    def report(self, name: str, doc: Dict):
        os.makedirs(self.out, exist_ok=True)
        path = os.path.join(self.out, name)
        with open(path, "w") as fh:
            json.dump({"config": self.config, **_jsonable(doc)}, fh, sort_keys=True, indent=1)
            fh.write("\n")
        self.written.append(path)
        return path


def _pmap(fn: Callable, items: Sequence, threads: int):
    """Ordered map; results come back in input order whatever the thread count."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- validation
def _positive(name, v):
    if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
        raise DomainError(f"{name} must be positive, got {v}")


def _corr(name, v):
    if not 0.0 <= v < 1.0:
        raise DomainError(f"{name} must lie in [0, 1), got {v}")


def _check_common(args):
    for b in getattr(args, "beta", None) or []:
        _positive("beta", b)
    for n in getattr(args, "N0", None) or []:
        _positive("N0", n)
    for n in getattr(args, "Nr", None) or []:
        _positive("Nr", n)
    for name in ("corr_t", "corr_r"):
        if getattr(args, name, None) is not None:
            _corr(name.replace("_", "-"), getattr(args, name))
    if getattr(args, "S", 2) not in (2, 4):
        raise DomainError(f"S must be 2 or 4, got {args.S}")
    if getattr(args, "field", "real") == "real" and getattr(args, "S", 2) != 2:
        raise DomainError("the real field only supports S = 2")
    if args.threads < 1:
        raise DomainError("--threads must be >= 1")
    if args.seed < 0:
        raise DomainError("--seed must be non-negative")


def _noise_pairs(args) -> List[NoiseSetting]:
    N0s = args.N0
    if args.Nr is None:
        return [NoiseSetting(n, n) for n in N0s]
    if len(args.Nr) == 1:
        return [NoiseSetting(n, args.Nr[0]) for n in N0s]
    if len(args.Nr) != len(N0s):
        raise DomainError("--Nr must have one value or as many values as --N0")
    return [NoiseSetting(a, b) for a, b in zip(N0s, args.Nr)]


# -------------------------------------------------------------- spectra/G
def _side(c: float) -> Spectrum:
    return toeplitz_limit_spectrum(c) if c > 0 else atom_spectrum([1.0])


def analytic_spectrum(beta: float, ct: float, cr: float, n_points: int) -> Spectrum:
    """Large-system spectrum from the Kronecker saddle point (any correlation)."""
    return kronecker_spectrum(_side(ct), _side(cr), beta, n_points=n_points)


class GCache:
    """One G-function per (beta, corr_t, corr_r); safe to fill from threads."""

    def __init__(self, args):
        self.args = args
        self._store: Dict = {}

    def __call__(self, beta: float, ct: float = None, cr: float = None) -> GFunction:
        a = self.args
        ct = a.corr_t if ct is None else ct
        cr = a.corr_r if cr is None else cr
        key = (beta, ct, cr)
        if key not in self._store:
            if getattr(a, "atom", None) is not None:
                sp = atom_spectrum([a.atom])
            else:
                sp = analytic_spectrum(beta, ct, cr, a.points)
            self._store[key] = GFunction(sp, a.field)
        return self._store[key]

    def prefill(self, keys, threads):
        todo = [k for k in dict.fromkeys(keys) if k not in self._store]
        for k, g in zip(todo, _pmap(lambda k: self(*k), todo, threads)):
            self._store[k] = g


# ----------------------------------------------------------------- commands
def cmd_spectrum(args, w: Writer) -> int:
    beta_req = args.beta[0]
    K = args.K
    L = max(1, int(round(K / beta_req)))
    beta = K / L
    spec = EnsembleSpec(K, L, args.field, "kronecker", args.corr_t, args.corr_r)
    analytic = analytic_spectrum(beta, args.corr_t, args.corr_r, args.points)

    def eig(i):
        return cross_correlation_eigenvalues(sample_channel(spec, trial_seeds(args.seed, i)[0]))

    eigs = np.concatenate(_pmap(eig, list(range(args.samples)), args.threads))
    emp = empirical_spectrum(eigs, bins=args.bins)
    ks = ks_distance(analytic, eigs)
    centers, e_rho, a_rho, mad = binned_density_error(analytic, eigs, args.bins)

    atoms_a = [f"atom,{_fmt(a)},{_fmt(wt)}" for a, wt in analytic.atoms]
    atoms_e = [f"atom,{_fmt(a)},{_fmt(wt)}" for a, wt in emp.atoms]
    meta = {"K": K, "L": L, "beta_effective": beta, "support": list(analytic.support)}
    w.table("spectrum_analytic", ["lambda", "density"], zip(analytic.lam, analytic.density),
            meta, atoms_a)
    w.table("spectrum_empirical", ["lambda", "density", "analytic_bin_density"],
            zip(centers, e_rho, a_rho), meta, atoms_e)
    report = {
        "K": K, "L": L, "beta": beta, "samples": args.samples,
        "ks_distance": ks, "mean_abs_density_error": mad,
        "support": list(analytic.support),
        "atoms_analytic": [list(a) for a in analytic.atoms],
        "atoms_empirical": [list(a) for a in emp.atoms],
        "mass": analytic.mass,
    }
    if args.corr_t == 0 and args.corr_r == 0:
        a, b = mp_edges(beta)
        keep = (analytic.lam > a + 0.05) & (analytic.lam < b - 0.05)
        err = np.abs(analytic.density[keep] - marchenko_pastur_density(analytic.lam[keep], beta))
        report["mp_max_error"] = float(err.max()) if err.size else 0.0
        report["mp_zero_atom"] = max(0.0, 1.0 - 1.0 / beta)
    w.report("spectrum_report.json", report)
    return EXIT_OK


def cmd_gfunc(args, w: Writer) -> int:
    g = GCache(args)(args.beta[0])
    if args.x is not None:
        xs = np.array(args.x)
    else:
        xs = g.sweep_points(args.n)
    bad = [x for x in xs if not g.in_domain(x)]
    if bad:
        raise DomainError(f"x values {bad[:3]} outside the domain {g.domain}")
    if 0.0 not in xs:
        xs = np.sort(np.append(xs, 0.0))
    tab = g.tabulate(xs)
    meta = {"domain": list(g.domain), "kappa": g.kappa, "mean": g.mean,
            "max_dual_residual": float(tab.residual.max())}
    w.table("gfunc", ["x", "G", "Gp", "Gpp", "dual_residual"],
            zip(tab.x, tab.G, tab.Gp, tab.Gpp, tab.residual), meta)
    return EXIT_OK


RS_COLUMNS = ["beta", "N0", "Nr", "m", "q", "mhat", "qhat", "Pb", "free_energy", "AT_lhs",
              "branch", "converged"]


def _rs_rows(beta, noise, sol: RSSolution, branch):
    p = sol.params
    return [beta, noise.N0, noise.Nr, p.m, p.q, p.m_hat, p.q_hat, sol.ber, sol.free_energy,
            sol.at_lhs, branch, True]


def _failed_row(beta, noise, n_extra=0):
    nan = float("nan")
    return [beta, noise.N0, noise.Nr] + [nan] * (7 + n_extra) + ["none", False]


def _rs_point(args, gc, beta, noise, both: bool):
    try:
        br = rs_branches(gc(beta), args.S, noise, damping=args.damping, tol=args.tol,
                         max_iter=args.max_iter)
    except (ConvergenceError, NumericError):
        return [_failed_row(beta, noise)], False
    sel = br.selected
    rows = [_rs_rows(beta, noise, sel, sel.label)]
    if both and br.coexist:
        other = br.warm if sel is br.cold else br.cold
        rows.append(_rs_rows(beta, noise, other, other.label + "-metastable"))
    return rows, True


def _grid(args):
    return [(b, n) for b in args.beta for n in _noise_pairs(args)]


def cmd_rs(args, w: Writer, name: str = "rs", both: bool = True) -> int:
    gc = GCache(args)
    grid = _grid(args)
    gc.prefill([(b, args.corr_t, args.corr_r) for b, _ in grid], args.threads)
    res = _pmap(lambda bn: _rs_point(args, gc, bn[0], bn[1], both), grid, args.threads)
    rows = [r for rr, _ in res for r in rr]
    meta = {"grid": [len(args.beta), len(_noise_pairs(args))], "S": args.S}
    w.table(name, RS_COLUMNS, rows, meta)
    return EXIT_OK if all(ok for _, ok in res) else EXIT_CONVERGENCE


def cmd_at_map(args, w: Writer) -> int:
    return cmd_rs(args, w, name="at_map", both=False)


RSB_COLUMNS = ["beta", "N0", "Nr", "x", "m", "q", "mhat", "qhat", "delta", "delta_hat", "Pb",
               "free_energy", "rs_free_energy", "AT_lhs", "converged"]


def cmd_rsb(args, w: Writer) -> int:
    gc = GCache(args)
    grid = [(b, n, x) for b, n in _grid(args) for x in args.x]
    gc.prefill([(b, args.corr_t, args.corr_r) for b, _, _ in grid], args.threads)

    def point(item):
        beta, noise, x = item
        g = gc(beta)
        nan = float("nan")
        try:
            rs = rs_branches(g, args.S, noise, damping=args.damping, tol=args.tol,
                             max_iter=args.max_iter).selected
            init = OneRSBOrderParams.from_rs(rs.params, x, delta=args.delta0)
            sol = rsb_solve(g, args.S, noise, x, init=init, damping=args.damping, tol=args.tol,
                            max_iter=args.max_iter)
        except (ConvergenceError, NumericError):
            return [beta, noise.N0, noise.Nr, x] + [nan] * 10 + [False], False
        p = sol.params
        return [beta, noise.N0, noise.Nr, x, p.m, p.q, p.m_hat, p.q_hat, p.delta, p.delta_hat,
                bit_error_rate(p.rs, args.S, g.field), sol.free_energy, rs.free_energy,
                rs.at_lhs, True], True

    res = _pmap(point, grid, args.threads)
    meta = {"grid": [len(args.beta), len(_noise_pairs(args)), len(args.x)], "S": args.S}
    w.table("rsb", RSB_COLUMNS, [r for r, _ in res], meta)
    return EXIT_OK if all(ok for _, ok in res) else EXIT_CONVERGENCE


def _theory(args, gc, beta, noise, ct, cr):
    try:
        return rs_branches(gc(beta, ct, cr), args.S, noise).selected.ber
    except (ConvergenceError, NumericError):
        return float("nan")


def cmd_ber_sweep(args, w: Writer) -> int:
    if args.ebn0 is not None:
        if len(args.beta) != 1:
            raise DomainError("an Eb/N0 sweep takes a single --beta")
        pts = [(args.beta[0], ebn0_to_noise(e, args.S, args.field), e) for e in args.ebn0]
        pts = [(b, NoiseSetting(n, n), e) for b, n, e in pts]
    else:
        pts = [(b, n, float("nan")) for b, n in _grid(args)]
    gc = GCache(args)
    keys = [(b, args.corr_t, args.corr_r) for b, _, _ in pts] + [(b, 0.0, 0.0) for b, _, _ in pts]
    gc.prefill(keys, args.threads)

    def theory(item):
        b, n, _ = item
        return (_theory(args, gc, b, n, args.corr_t, args.corr_r), _theory(args, gc, b, n, 0.0, 0.0))

    th = _pmap(theory, pts, args.threads)
    columns = ["beta", "N0", "Nr", "EbN0_dB", "Pb_corr", "Pb_uncorr"]
    rows = [[b, n.N0, n.Nr, e, tc, tu] for (b, n, e), (tc, tu) in zip(pts, th)]
    if args.simulate:
        columns += ["sim_ber", "sim_ci95", "sim_trials", "sim_excluded"]
        for row, (b, n, _) in zip(rows, pts):
            K = max(1, int(round(b * args.L)))
            spec = EnsembleSpec(K, args.L, args.field, "kronecker", args.corr_t, args.corr_r)
            rep = run_ber(spec, n, args.S, args.trials, args.seed, args.method,
                          threads=args.threads, with_theory=False)
            row += [rep.ber, rep.ci95, rep.trials, rep.excluded]
    ok = all(np.isfinite(t) for pair in th for t in pair)
    w.table("ber_sweep", columns, rows, {"S": args.S})
    return EXIT_OK if ok else EXIT_CONVERGENCE


SIM_COLUMNS = ["beta", "N0", "Nr", "S", "method", "trials", "errors", "ber", "ci95",
               "theory_ber", "excluded"]


def cmd_simulate(args, w: Writer) -> int:
    rows = []
    for b, noise in _grid(args):
        K = max(1, int(round(b * args.L)))
        spec = EnsembleSpec(K, args.L, args.field, "kronecker", args.corr_t, args.corr_r)
        rep = run_ber(spec, noise, args.S, args.trials, args.seed, args.method,
                      threads=args.threads, gauge=args.gauge, with_theory=not args.no_theory)
        row = rep.as_row()
        rows.append([row[c] for c in SIM_COLUMNS])
    w.table("simulate", SIM_COLUMNS, rows, {"L": args.L})
    return EXIT_OK


# -------------------------------------------------------------------- parser
def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--threads", type=int, default=1, help="worker threads")


def _add_ensemble(p, beta="1.5", corr=0.2, field="real"):
    p.add_argument("--beta", type=parse_grid, default=parse_grid(beta), help="load K/L (grid)")
    p.add_argument("--corr", type=float, default=None,
                   help=f"Toeplitz parameter for both sides (default {corr})")
    p.add_argument("--corr-t", type=float, default=None, dest="corr_t")
    p.add_argument("--corr-r", type=float, default=None, dest="corr_r")
    p.add_argument("--field", choices=("real", "complex"), default=field)
    p.add_argument("--points", type=int, default=1200, help="analytic spectrum resolution")
    p.set_defaults(corr_default=corr)


def _add_noise(p, N0="0.37"):
    p.add_argument("--N0", type=parse_grid, default=parse_grid(N0), help="true noise (grid)")
    p.add_argument("--Nr", type=parse_grid, default=None, help="receiver noise (default: N0)")
    p.add_argument("--S", type=int, default=2, choices=(2, 4))


def _add_solver(p):
    p.add_argument("--damping", type=float, default=0.7)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--max-iter", type=int, default=20000, dest="max_iter")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="linvec", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="analytic vs empirical eigenvalue spectrum")
    _add_common(p)
    _add_ensemble(p, beta="1.5", field="complex")
    p.add_argument("--K", type=int, default=300)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--bins", type=int, default=60)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("gfunc", help="tabulate G, G', G'' with the dual-route residual")
    _add_common(p)
    _add_ensemble(p)
    p.add_argument("--x", type=parse_grid, default=None, help="arguments (default: domain sweep)")
    p.add_argument("--n", type=int, default=50, help="points in the default sweep")
    p.add_argument("--atom", type=float, default=None, help="use a single-atom spectrum instead")
    p.set_defaults(func=cmd_gfunc)

    for name, fn, helptext in (("rs", cmd_rs, "RS fixed points over a (beta, N0) grid"),
                               ("at-map", cmd_at_map, "AT stability over a (beta, N0) grid")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        _add_ensemble(p, beta="0.5:2.0:7")
        _add_noise(p)
        _add_solver(p)
        p.add_argument("--atom", type=float, default=None, help="use a single-atom spectrum instead")
        p.set_defaults(func=fn)

    p = sub.add_parser("rsb", help="1RSB fixed points at given breaking parameters")
    _add_common(p)
    _add_ensemble(p, beta="1.0")
    _add_noise(p)
    _add_solver(p)
    p.add_argument("--x", type=parse_grid, default=parse_grid("1.0"), help="breaking parameters")
    p.add_argument("--delta0", type=float, default=1e-3, help="initial Delta")
    p.add_argument("--atom", type=float, default=None, help="use a single-atom spectrum instead")
    p.set_defaults(func=cmd_rsb)

    p = sub.add_parser("ber-sweep", help="theory BER curves, correlated vs uncorrelated")
    _add_common(p)
    _add_ensemble(p, beta="0.2:2.0:10")
    _add_noise(p)
    p.add_argument("--ebn0", type=parse_grid, default=None, help="Eb/N0 grid in dB (overrides --N0)")
    p.add_argument("--simulate", action="store_true", help="overlay Monte Carlo estimates")
    p.add_argument("--L", type=int, default=256)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--method", choices=("iterative", "exact"), default="iterative")
    p.set_defaults(func=cmd_ber_sweep)

    p = sub.add_parser("simulate", help="Monte Carlo BER with the matching theory value")
    _add_common(p)
    _add_ensemble(p, beta="0.8")
    _add_noise(p)
    p.add_argument("--L", type=int, default=256)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--method", choices=("iterative", "exact"), default="iterative")
    p.add_argument("--gauge", action="store_true", help="send all-ones through H diag(b0)")
    p.add_argument("--no-theory", action="store_true", dest="no_theory")
    p.set_defaults(func=cmd_simulate)
    return ap


def _resolve(args):
    c = args.corr if args.corr is not None else args.corr_default
    args.corr_t = c if args.corr_t is None else args.corr_t
    args.corr_r = c if args.corr_r is None else args.corr_r
    del args.corr, args.corr_default
    for name in ("K", "samples", "bins", "L", "trials", "points", "n", "max_iter"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            raise DomainError(f"--{name.replace('_', '-')} must be >= 1")
    if getattr(args, "bins", 10) < 10:
        raise DomainError("--bins must be >= 10")
    if hasattr(args, "damping") and not 0 < args.damping <= 1:
        raise DomainError("--damping must lie in (0, 1]")
    for x in getattr(args, "x", None) or []:
        if args.command == "rsb" and not 0 < x <= 1:
            raise DomainError(f"breaking parameter must lie in (0, 1], got {x}")
    _check_common(args)


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_INVALID
    try:
        _resolve(args)
        w = Writer(args)
        # One BLAS thread keeps floating-point reductions identical across runs.
        with threadpool_limits(1):
            t0 = time.perf_counter()
            code = args.func(args, w)
        for path in w.written:
            print(path)
        print(f"done in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
        return code
    except (DomainError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConvergenceError, NumericError) as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
