"""Eigenvalue spectra of ``H^dagger H``.

Three routes are provided: direct diagonalization of sampled channels, the
annealed saddle point for the Kronecker model (coupled equations in ``T`` and
``T_hat``), and closed forms (Toeplitz limit, Marchenko-Pastur).

Every :class:`Spectrum` carries a quadrature rule (``nodes``, ``weights``) for
its continuous part in addition to the display grid; all downstream integrals
(G-function, means) use that rule plus the atoms.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .ensemble import ChannelInstance, EnsembleSpec
from .errors import ConvergenceError, DomainError, NumericError

ZERO_EIG = 1e-9


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalue density: continuous part on a grid plus point masses.

    Parameters
    ----------
    lam, density : ndarray
        Ascending grid of the continuous part and the density on it.
    atoms : tuple of (lambda, weight)
        Point masses.
    nodes, weights : ndarray, optional
        Quadrature rule for the continuous part.  Defaults to the trapezoidal
        rule on ``lam``.
    cdf_x, cdf_y : ndarray, optional
        Piecewise-linear cumulative mass of the continuous part.  Defaults to
        the cumulative trapezoid on ``lam``.
    support : (float, float), optional
        Edges of the continuous part; defaults to ``(lam[0], lam[-1])``.
    """

    lam: np.ndarray
    density: np.ndarray
    atoms: tuple = ()
    nodes: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    cdf_x: Optional[np.ndarray] = None
    cdf_y: Optional[np.ndarray] = None
    support: Optional[tuple] = None

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        rho = np.asarray(self.density, dtype=float)
        if lam.shape != rho.shape or lam.ndim != 1:
            raise DomainError("lam and density must be 1-D arrays of equal length")
        if lam.size > 1 and np.any(np.diff(lam) <= 0):
            raise DomainError("grid must be strictly ascending")
        if np.any(rho < 0) or not np.all(np.isfinite(rho)):
            raise DomainError("densities must be finite and nonnegative")
        atoms = tuple((float(a), float(w)) for a, w in self.atoms if w > 0)
        if any(w < 0 for _, w in self.atoms):
            raise DomainError("atom weights must be nonnegative")
        atoms = tuple(sorted(atoms))
        if self.nodes is None:
            if lam.size > 1:
                h = np.diff(lam)
                wts = np.zeros_like(lam)
                wts[:-1] += 0.5 * h
                wts[1:] += 0.5 * h
                wts = wts * rho
            else:
                wts = np.zeros_like(lam)
            nodes = lam
        else:
            nodes = np.asarray(self.nodes, dtype=float)
            wts = np.asarray(self.weights, dtype=float)
            if nodes.shape != wts.shape or np.any(wts < 0):
                raise DomainError("quadrature nodes/weights malformed")
        if self.cdf_x is None:
            cx = lam
            cy = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(lam) * (rho[1:] + rho[:-1]))]) \
                if lam.size > 1 else np.zeros_like(lam)
        else:
            cx = np.asarray(self.cdf_x, dtype=float)
            cy = np.asarray(self.cdf_y, dtype=float)
        if self.support is None:
            sup = (float(lam[0]), float(lam[-1])) if lam.size else None
        else:
            sup = (float(self.support[0]), float(self.support[1]))
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "density", rho)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", wts)
        object.__setattr__(self, "cdf_x", cx)
        object.__setattr__(self, "cdf_y", cy)
        object.__setattr__(self, "support", sup)

    @property
    def continuous_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def atom_mass(self) -> float:
        return float(sum(w for _, w in self.atoms))

    @property
    def mass(self) -> float:
        return self.continuous_mass + self.atom_mass

    def points(self):
        """The discrete measure used for integrals: (positions, weights)."""
        if self.atoms:
            a = np.array(self.atoms)
            x = np.concatenate([self.nodes, a[:, 0]])
            w = np.concatenate([self.weights, a[:, 1]])
        else:
            x, w = self.nodes, self.weights
        keep = w > 0
        return x[keep], w[keep]

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]):
        x, w = self.points()
        return np.sum(w * f(x))

    def edges(self):
        """(lowest, highest) point carrying mass, counting atoms and the support."""
        lo, hi = np.inf, -np.inf
        if self.support is not None and self.continuous_mass > 0:
            lo, hi = self.support
        for a, _ in self.atoms:
            lo, hi = min(lo, a), max(hi, a)
        return lo, hi

    def continuous_cdf(self, x, normalized: bool = True):
        """Cumulative mass of the continuous part at ``x``."""
        y = np.interp(x, self.cdf_x, self.cdf_y, left=0.0, right=self.cdf_y[-1])
        return y / self.cdf_y[-1] if normalized else y

    def renormalized(self, factor: float) -> "Spectrum":
        """Copy with the continuous part scaled by ``factor``."""
        return Spectrum(self.lam, self.density * factor, self.atoms, self.nodes,
                        self.weights * factor, self.cdf_x, self.cdf_y * factor, self.support)


@dataclass(frozen=True)
class ResolventPoint:
    Lam: complex
    T: complex
    T_hat: complex
    Q: complex
    residual: float = 0.0
    iterations: int = 0

    @property
    def density(self) -> float:
        # Q is the Stieltjes transform, so Im Q < 0 above the real axis.
        return -self.Q.imag / np.pi


def spectrum_mean(s: Spectrum) -> float:
    return float(s.integrate(lambda x: x))


def _theta_rule(a: float, b: float, n: int):
    """Midpoint rule in theta for ``lam = a + (b-a) sin^2(theta)``.

    Absorbs inverse-square-root (and square-root) edge behaviour.  Returns
    midpoints, the jacobian times the cell width, and the cell boundaries.
    """
    dth = 0.5 * np.pi / n
    th = (np.arange(n) + 0.5) * dth
    lam = a + (b - a) * np.sin(th) ** 2
    jac = (b - a) * np.sin(2 * th) * dth
    edges = a + (b - a) * np.sin(np.arange(n + 1) * dth) ** 2
    return lam, jac, edges


def closed_form_spectrum(density: Callable, a: float, b: float, n: int = 2000,
                         atoms: Sequence = ()) -> Spectrum:
    """Wrap a closed-form density on ``[a, b]`` with the sin^2 edge substitution."""
    lam, jac, edges = _theta_rule(a, b, n)
    rho = density(lam)
    w = rho * jac
    cdf = np.concatenate([[0.0], np.cumsum(w)])
    return Spectrum(lam, rho, tuple(atoms), lam, w, edges, cdf, (a, b))


def atom_spectrum(positions, weights=None) -> Spectrum:
    positions = np.atleast_1d(np.asarray(positions, dtype=float))
    if weights is None:
        weights = np.full(positions.size, 1.0 / positions.size)
    return Spectrum(np.array([]), np.array([]), tuple(zip(positions, weights)))


def toeplitz_edges(c: float):
    return (1 - c) / (1 + c), (1 + c) / (1 - c)


def toeplitz_limit_density(lam, c: float):
    """Limiting eigenvalue density of the ``c**|i-j|`` correlation matrix.

    Zero outside ``(alpha_-, alpha_+)``; ``+inf`` exactly at either edge.
    """
    if not 0.0 < c < 1.0:
        raise DomainError(f"Toeplitz parameter must lie in (0, 1), got {c}")
    lo, hi = toeplitz_edges(c)
    lam = np.asarray(lam, dtype=float)
    out = np.zeros_like(lam)
    inside = (lam > lo) & (lam < hi)
    x = lam[inside]
    out[inside] = 1.0 / (np.pi * x * np.sqrt((hi - x) * (x - lo)))
    out[(lam == lo) | (lam == hi)] = np.inf
    return out if out.ndim else float(out)


def toeplitz_limit_spectrum(c: float, n: int = 400) -> Spectrum:
    if c == 0:
        return atom_spectrum([1.0])
    lo, hi = toeplitz_edges(c)
    return closed_form_spectrum(lambda x: toeplitz_limit_density(x, c), lo, hi, n)


def mp_edges(beta: float):
    return (np.sqrt(beta) - 1) ** 2, (np.sqrt(beta) + 1) ** 2


def marchenko_pastur_density(lam, beta: float):
    """Continuous part of the limiting spectrum of ``H^dagger H`` for i.i.d. H.

    Entries of ``H`` have variance ``1/L`` and ``beta = K/L``; the continuous
    mass is ``min(1, 1/beta)``.
    """
    if beta <= 0:
        raise DomainError(f"beta must be positive, got {beta}")
    a, b = mp_edges(beta)
    lam = np.asarray(lam, dtype=float)
    out = np.zeros_like(lam)
    inside = (lam > a) & (lam < b)
    x = lam[inside]
    out[inside] = np.sqrt((b - x) * (x - a)) / (2 * np.pi * beta * x)
    return out if out.ndim else float(out)


def marchenko_pastur_spectrum(beta: float, n: int = 2000) -> Spectrum:
    a, b = mp_edges(beta)
    atoms = ((0.0, 1.0 - 1.0 / beta),) if beta > 1 else ()
    return closed_form_spectrum(lambda x: marchenko_pastur_density(x, beta), a, b, n, atoms)


# ---------------------------------------------------------------- empirical

def cross_correlation_eigenvalues(inst) -> np.ndarray:
    H = inst.H if isinstance(inst, ChannelInstance) else np.asarray(inst)
    try:
        return np.linalg.eigvalsh(H.conj().T @ H)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericError(f"diagonalization failed: {exc}") from exc


def empirical_spectrum(inst, bins: int = 50) -> Spectrum:
    """Histogram spectrum of ``H^dagger H``.

    ``inst`` may be a :class:`ChannelInstance`, a sequence of them (pooled),
    or an array of eigenvalues.  Eigenvalues below ``1e-9`` form an atom at 0.
    """
    if bins < 10:
        raise DomainError(f"bins must be >= 10, got {bins}")
    if isinstance(inst, ChannelInstance):
        eig = cross_correlation_eigenvalues(inst)
    elif isinstance(inst, (list, tuple)) and inst and isinstance(inst[0], ChannelInstance):
        eig = np.concatenate([cross_correlation_eigenvalues(i) for i in inst])
    else:
        eig = np.asarray(inst, dtype=float).ravel()
    n = eig.size
    zero = eig < ZERO_EIG
    atoms = [(0.0, zero.sum() / n)] if zero.any() else []
    rest = np.sort(eig[~zero])
    if rest.size == 0:
        return Spectrum(np.array([]), np.array([]), tuple(atoms))
    spread = rest[-1] - rest[0]
    if spread <= 1e-12 * max(1.0, abs(rest[-1])):
        atoms.append((float(rest.mean()), rest.size / n))
        return Spectrum(np.array([]), np.array([]), tuple(atoms))
    counts, edges = np.histogram(rest, bins=bins)
    width = np.diff(edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    rho = counts / (n * width)
    w = counts / n
    cdf_x = rest
    cdf_y = np.arange(1, rest.size + 1) / n
    return Spectrum(centers, rho, tuple(atoms), centers, w, cdf_x, cdf_y, (rest[0], rest[-1]))


def ks_distance(s: Spectrum, samples) -> float:
    """Kolmogorov-Smirnov distance between the continuous part of ``s`` and samples.

    Both sides are normalized to unit mass; samples below ``1e-9`` are dropped.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    x = x[x >= ZERO_EIG]
    n = x.size
    F = s.continuous_cdf(x)
    hi = np.arange(1, n + 1) / n
    lo = np.arange(0, n) / n
    return float(max(np.max(hi - F), np.max(F - lo)))


def binned_density_error(s: Spectrum, samples, bins: int = 50):
    """Histogram of the nonzero samples against bin averages of ``s``.

    Densities on both sides are per unit total mass (zeros included in the
    count), so they compare continuous parts directly.  Returns
    ``(centers, empirical, analytic, mean_abs_error)``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    rest = x[x >= ZERO_EIG]
    counts, edges = np.histogram(rest, bins=bins)
    width = np.diff(edges)
    emp = counts / (n * width)
    cdf = s.continuous_cdf(edges, normalized=False)
    ana = np.diff(cdf) / width
    centers = 0.5 * (edges[1:] + edges[:-1])
    return centers, emp, ana, float(np.mean(np.abs(emp - ana)))


# ---------------------------------------------------------------- Kronecker

def _as_measure(s: Spectrum):
    x, w = s.points()
    return x, w


def _kron_eval(T, Lam, beta, xt, wt, xr, wr):
    dr = 1.0 - beta * T * xr
    T_hat = np.sum(wr * xr / dr)
    dT_hat = np.sum(wr * beta * xr ** 2 / dr ** 2)
    dt = Lam - T_hat * xt
    T_new = np.sum(wt * xt / dt)
    dT_new = np.sum(wt * xt ** 2 / dt ** 2) * dT_hat
    return T_hat, T_new, dT_new, dt


def _physical(T, Q, Lam):
    # above the real axis the transforms live in the lower half plane
    tol = 1e-12 * max(1.0, abs(T))
    return Lam.imag <= 0 or (T.imag <= tol and Q.imag <= 1e-12 * max(1.0, abs(Q)))


def _newton(T, Lam, beta, meas, tol, max_iter):
    xt, wt, xr, wr = meas
    for it in range(1, max_iter + 1):
        _, T_new, dT_new, _ = _kron_eval(T, Lam, beta, xt, wt, xr, wr)
        F = T - T_new
        res = abs(F)
        if not np.isfinite(res):
            return T, np.inf, it
        if res < tol:
            return T, res, it
        step = F / (1.0 - dT_new)
        lam_s = 1.0
        while lam_s > 1e-6:
            Tc = T - lam_s * step
            _, Tc_new, _, _ = _kron_eval(Tc, Lam, beta, xt, wt, xr, wr)
            rc = abs(Tc - Tc_new)
            if np.isfinite(rc) and rc < res:
                break
            lam_s *= 0.5
        T = Tc
    _, T_new, _, _ = _kron_eval(T, Lam, beta, xt, wt, xr, wr)
    return T, abs(T - T_new), max_iter


def _fixed_point(T, Lam, beta, meas, damping, tol, max_iter):
    xt, wt, xr, wr = meas
    res = np.inf
    for it in range(1, max_iter + 1):
        _, T_new, _, _ = _kron_eval(T, Lam, beta, xt, wt, xr, wr)
        res = abs(T_new - T)
        if res < tol:
            return T_new, res, it
        T = (1 - damping) * T + damping * T_new
    return T, res, max_iter


def _finish(T, Lam, beta, meas, res, it):
    xt, wt, xr, wr = meas
    T_hat, T_new, _, dt = _kron_eval(T, Lam, beta, xt, wt, xr, wr)
    Q = np.sum(wt / dt)
    return ResolventPoint(complex(Lam), complex(T_new), complex(T_hat), complex(Q), float(res), it)


def kronecker_resolvent(rho_t: Spectrum, rho_r: Spectrum, beta: float, Lam: complex,
                        init: Optional[complex] = None, method: str = "newton",
                        damping: float = 0.5, tol: float = 1e-10,
                        max_iter: int = 10_000) -> ResolventPoint:
    """Solve the coupled Kronecker saddle-point equations at a complex probe.

    ``T = int lam rho_t / (Lam - T_hat lam)``,
    ``T_hat = int lam rho_r / (1 - beta T lam)`` and
    ``Q = int rho_t / (Lam - T_hat lam)``.

    ``method="fixed_point"`` runs plain damped iteration from ``init``;
    ``"newton"`` (default) uses Newton steps on ``T`` and, without a usable
    warm start, continues the solution down from a probe far above the axis.
    Raises :class:`ConvergenceError` if the residual stays above ``tol``.
    """
    Lam = complex(Lam)
    if Lam.imag <= 0:
        raise DomainError(f"probe must satisfy Im(Lam) > 0, got {Lam}")
    if beta <= 0:
        raise DomainError(f"beta must be positive, got {beta}")
    xt, wt = _as_measure(rho_t)
    xr, wr = _as_measure(rho_r)
    meas = (xt, wt, xr, wr)
    mu_t = float(np.sum(wt * xt))

    if method == "fixed_point":
        T0 = mu_t / Lam if init is None else complex(init)
        T, res, it = _fixed_point(T0, Lam, beta, meas, damping, tol, max_iter)
        if not res < tol:
            raise ConvergenceError(f"fixed point did not converge at Lam={Lam}", residual=res)
        return _finish(T, Lam, beta, meas, res, it)
    if method != "newton":
        raise DomainError(f"unknown method {method!r}")

    if init is not None:
        T, res, it = _newton(complex(init), Lam, beta, meas, tol, 100)
        if res < tol:
            pt = _finish(T, Lam, beta, meas, res, it)
            if _physical(pt.T, pt.Q, Lam):
                return pt

    # continuation in the imaginary part from far above the real axis
    y = max(4.0, Lam.imag)
    probe = complex(Lam.real, y)
    T, res, it_total = _fixed_point(mu_t / probe, probe, beta, meas, 0.5, tol, max_iter)
    factor = 0.25
    while y > Lam.imag:
        y_next = max(Lam.imag, y * factor)
        probe = complex(Lam.real, y_next)
        Tn, res, it = _newton(T, probe, beta, meas, tol, 200)
        it_total += it
        ok = res < tol
        if ok:
            pt = _finish(Tn, probe, beta, meas, res, it)
            ok = _physical(pt.T, pt.Q, probe)
        if ok:
            T, y = Tn, y_next
            factor = max(0.25, factor ** 2)
        elif factor > 0.999:
            raise ConvergenceError(f"continuation failed at Lam={probe}", residual=res)
        else:
            factor = np.sqrt(factor)
    pt = _finish(T, Lam, beta, meas, res, it_total)
    if not _physical(pt.T, pt.Q, Lam):
        raise ConvergenceError(f"solution left the physical branch at Lam={Lam}", residual=res)
    return pt


class _Sweeper:
    """Evaluates the continuous density along increasing lambda with warm starts."""

    def __init__(self, rho_t, rho_r, beta, eps):
        self.rho_t, self.rho_r, self.beta, self.eps = rho_t, rho_r, beta, eps
        self.w0 = max(0.0, 1.0 - 1.0 / beta)
        self.T = None

    def _eval(self, Lam, init):
        pt = kronecker_resolvent(self.rho_t, self.rho_r, self.beta, Lam, init=init)
        Q = pt.Q - self.w0 / Lam if self.w0 > 0 else pt.Q
        return pt.T, max(0.0, -Q.imag / np.pi)

    def __call__(self, lam: float, warm: bool = True) -> float:
        Lam = complex(lam, self.eps)
        init = self.T if warm else None
        T, rho = self._eval(Lam, init)
        if init is not None and rho < 1e-6:
            # A warm start from outside the support can stay on the real
            # branch after crossing an edge; confirm from scratch.
            T, rho = self._eval(Lam, None)
        self.T = T
        return rho


def kronecker_support(rho_t: Spectrum, rho_r: Spectrum, beta: float, scan: int = 600,
                      eps: float = 1e-12, threshold: float = 1e-8):
    """Locate the intervals carrying the continuous part of the Kronecker spectrum."""
    _, ht = rho_t.edges()
    _, hr = rho_r.edges()
    top = 1.05 * (1 + np.sqrt(beta)) ** 2 * ht * hr + 1e-3
    start = 1e-6 * top if beta > 1 else 0.0
    xs = np.linspace(start, top, scan)
    sw = _Sweeper(rho_t, rho_r, beta, eps)
    inside = np.array([sw(x) > threshold for x in xs])
    if inside[-1]:
        raise NumericError("spectrum support exceeds the scan range")

    def refine(a, b, a_in):
        probe = _Sweeper(rho_t, rho_r, beta, eps)
        for _ in range(60):
            m = 0.5 * (a + b)
            if (probe(m, warm=False) > threshold) == a_in:
                a = m
            else:
                b = m
            if b - a < 1e-12 * top:
                break
        return 0.5 * (a + b)

    intervals = []
    lo = xs[0] if inside[0] else None
    for i in range(1, scan):
        if inside[i] and not inside[i - 1]:
            lo = refine(xs[i - 1], xs[i], False)
        elif not inside[i] and inside[i - 1]:
            intervals.append((lo, refine(xs[i - 1], xs[i], True)))
    if not intervals:
        raise NumericError("no continuous support found")
    return intervals


def kronecker_spectrum(rho_t: Spectrum, rho_r: Spectrum, beta: float,
                       grid: Optional[np.ndarray] = None, eps: float = 1e-6,
                       n_points: int = 1200) -> Spectrum:
    """Average spectrum of ``H^dagger H`` under the Kronecker model.

    With ``grid=None`` the support is located automatically and sampled with
    the sin^2 edge substitution; an explicit grid uses the trapezoidal rule.
    The zero atom ``max(0, 1 - 1/beta)`` is attached exactly and the continuous
    part renormalized to the complementary mass; a correction of 1% or more
    raises :class:`NumericError`.
    """
    if not 1e-8 <= eps <= 1e-3:
        raise DomainError(f"eps must lie in [1e-8, 1e-3], got {eps}")
    w0 = max(0.0, 1.0 - 1.0 / beta)
    target = 1.0 - w0
    atoms = ((0.0, w0),) if w0 > 0 else ()
    sw = _Sweeper(rho_t, rho_r, beta, eps)
    if grid is not None:
        grid = np.asarray(grid, dtype=float)
        rho = np.array([sw(x) for x in grid])
        spec = Spectrum(grid, rho, atoms)
    else:
        intervals = kronecker_support(rho_t, rho_r, beta)
        total = sum(b - a for a, b in intervals)
        lam_all, rho_all, w_all, cx_all, cy_all = [], [], [], [], []
        offset = 0.0
        for a, b in intervals:
            n = max(50, int(round(n_points * (b - a) / total)))
            lam, jac, edges = _theta_rule(a, b, n)
            sw.T = None
            rho = np.array([sw(x) for x in lam])
            w = rho * jac
            lam_all.append(lam), rho_all.append(rho), w_all.append(w)
            cx_all.append(edges)
            cy_all.append(offset + np.concatenate([[0.0], np.cumsum(w)]))
            offset += w.sum()
        lam = np.concatenate(lam_all)
        spec = Spectrum(lam, np.concatenate(rho_all), atoms, lam, np.concatenate(w_all),
                        np.concatenate(cx_all), np.concatenate(cy_all),
                        (intervals[0][0], intervals[-1][1]))
    mass = spec.continuous_mass
    if not abs(mass - target) < 0.01 * target:
        raise NumericError(f"continuous mass {mass:.6f} differs from {target:.6f} by >= 1%; "
                           "widen the grid or change eps")
    return spec.renormalized(target / mass)


def ensemble_spectrum(spec: EnsembleSpec, n_points: int = 1200) -> Spectrum:
    """Large-system average spectrum for an ensemble description.

    i.i.d. channels use the closed-form Marchenko-Pastur law; Kronecker
    channels solve the saddle point with Toeplitz-limit (or explicit-matrix)
    correlation spectra.
    """
    beta = spec.beta
    if spec.kind == "iid":
        return marchenko_pastur_spectrum(beta, n_points)

    def side(c):
        if np.isscalar(c):
            return toeplitz_limit_spectrum(float(c))
        return atom_spectrum(np.linalg.eigvalsh(np.asarray(c)))

    rt, rr = side(spec.corr_t), side(spec.corr_r)
    if len(rt.atoms) == 1 and len(rr.atoms) == 1 and rt.atoms[0][0] == 1.0 \
            and rr.atoms[0][0] == 1.0:
        return marchenko_pastur_spectrum(beta, n_points)
    return kronecker_spectrum(rt, rr, beta, n_points=n_points)
