"""The G-function of an eigenvalue spectrum.

For a spectrum ``rho`` the inverse Stieltjes map ``Lam(x)`` solves
``x = int rho(lam) / (Lam - lam) dlam`` with ``Lam`` outside the support, and

    G(x) = kappa * int_0^x (Lam(t) - 1/t) dt,

with ``kappa = 1`` for complex channels and ``1/2`` for real ones.

Numerically we never form ``Lam`` near ``t = 0``.  Writing
``s(t) = Lam(t) - 1/t`` the inversion becomes

    h(s; t) = sum_k w_k (s - lam_k) / (1 + t (s - lam_k)) = 0,

which is regular at ``t = 0`` (where ``s = mean``) and increasing in ``s``.
Then ``G' = kappa * s`` and ``G'' = kappa * s'`` with
``s' = sum w (s-lam)^2 / D^2 / sum w / D^2``, ``D = 1 + t (s - lam)``.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import integrate, optimize

from .errors import DomainError, NumericError
from .spectrum import Spectrum, spectrum_mean

FIELD_PREFACTOR = {"complex": 1.0, "real": 0.5}


@dataclass(frozen=True)
class GTable:
    """Tabulated G-function values on a grid of arguments."""

    x: np.ndarray
    G: np.ndarray
    Gp: np.ndarray
    Gpp: np.ndarray
    Lam: np.ndarray
    residual: np.ndarray  # |integral form - extremization form|


class GFunction:
    """Evaluator for ``G``, ``G'`` and ``G''`` built from a :class:`Spectrum`.

    Parameters
    ----------
    spectrum : Spectrum
        Eigenvalue distribution of ``H^dagger H``.  The measure is normalized
        to unit mass before use.
    field : {"complex", "real"}
        Selects the prefactor ``kappa``.
    cache_size : int
        Number of ``s(t)`` solutions kept for reuse.

    Notes
    -----
    The object is immutable apart from a locked memo table, so one instance
    may be shared between threads.
    """

    def __init__(self, spectrum: Spectrum, field: str = "complex", cache_size: int = 8192):
        if field not in FIELD_PREFACTOR:
            raise DomainError(f"field must be one of {tuple(FIELD_PREFACTOR)}, got {field!r}")
        lam, w = spectrum.points()
        if w.size == 0 or w.sum() <= 0:
            raise DomainError("spectrum carries no mass")
        self.spectrum = spectrum
        self.field = field
        self.kappa = FIELD_PREFACTOR[field]
        self._lam = np.asarray(lam, dtype=float)
        self._w = np.asarray(w, dtype=float) / w.sum()
        self.mean = float(np.dot(self._w, self._lam))
        self.variance = float(np.dot(self._w, (self._lam - self.mean) ** 2))
        lo, hi = spectrum.edges()
        self.lower = float(min(lo, self._lam.min()))
        self.upper = float(max(hi, self._lam.max()))
        self.degenerate = self.upper - self.lower <= 1e-14 * max(1.0, abs(self.upper))
        self.domain = self._domain()
        self._cache = {}
        self._cache_size = int(cache_size)
        self._lock = threading.Lock()

    # ------------------------------------------------------------------ domain
    def _domain(self) -> Tuple[float, float]:
        if self.degenerate:
            return -np.inf, np.inf
        dl = self._lam - self.lower
        du = self.upper - self._lam
        with np.errstate(divide="ignore"):
            x_lo = -np.inf if np.any(dl <= 0) else -float(np.sum(self._w / dl))
            x_hi = np.inf if np.any(du <= 0) else float(np.sum(self._w / du))
        return x_lo, x_hi

    def in_domain(self, x: float) -> bool:
        return self.domain[0] < x < self.domain[1]

    def _check(self, x: float) -> float:
        x = float(x)
        if not np.isfinite(x) or not self.in_domain(x):
            raise DomainError(f"x = {x!r} outside the G-function domain {self.domain}")
        return x

    # ------------------------------------------------------------ inversion
    def _h(self, s: float, t: float):
        u = s - self._lam
        D = 1.0 + t * u
        h = np.dot(self._w, u / D)
        dh = np.dot(self._w, 1.0 / D ** 2)
        return h, dh

    def _solve_s(self, t: float) -> float:
        if t == 0.0 or self.degenerate:
            return self.mean
        key = float(t)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if t > 0:
            a, b = max(self.mean, self.upper - 1.0 / t), self.upper
        else:
            a, b = self.lower, min(self.mean, self.lower + 1.0 / (-t))
        # Safeguarded Newton inside the bracket; h is increasing in s.
        # The bracket end nearest the support can be a pole of h; Newton creeps
        # away from a pole in tiny steps, so never start on one.
        width = max(b - a, 1e-300)
        inner = a + 1e-6 * width < self.mean < b - 1e-6 * width
        s = self.mean if inner else 0.5 * (a + b)
        for _ in range(200):
            with np.errstate(divide="ignore", invalid="ignore"):
                h, dh = self._h(s, t)
            if not np.isfinite(h):
                # Only possible on the bracket ends; step inwards.
                s = 0.5 * (a + b)
                continue
            if h == 0.0:
                break
            if h < 0:
                a = s
            else:
                b = s
            step = h / dh if dh > 0 and np.isfinite(dh) else np.inf
            s_new = s - step
            if not (a < s_new < b):
                s_new = 0.5 * (a + b)
            if abs(s_new - s) <= 1e-15 * max(1.0, abs(s)) or (b - a) <= 1e-16 * width:
                s = s_new
                break
            s = s_new
        else:
            raise NumericError(f"Stieltjes inversion did not converge at t = {t!r}")
        with self._lock:
            if len(self._cache) >= self._cache_size:
                self._cache.clear()
            self._cache[key] = s
        return s

    def lambda_of_x(self, x: float) -> float:
        """Root ``Lam`` of ``x = int rho / (Lam - lam)``; above the support for x > 0."""
        x = self._check(x)
        if x == 0.0:
            raise DomainError("Lam(x) is singular at x = 0")
        return self._solve_s(x) + 1.0 / x

    def x_of_lambda(self, Lam: float) -> float:
        """Forward Stieltjes map on the real axis outside the support."""
        Lam = float(Lam)
        if self.lower <= Lam <= self.upper:
            raise DomainError(f"Lam = {Lam} lies inside the support [{self.lower}, {self.upper}]")
        return float(np.dot(self._w, 1.0 / (Lam - self._lam)))

    # -------------------------------------------------------------- values
    def g_prime(self, x: float) -> float:
        return self.kappa * self._solve_s(self._check(x))

    def g_derivs(self, x: float) -> Tuple[float, float]:
        """``(G'(x), G''(x))``; at x = 0 these are ``kappa * (mean, variance)``."""
        x = self._check(x)
        s = self._solve_s(x)
        if self.degenerate:
            return self.kappa * s, 0.0
        u = s - self._lam
        D2 = (1.0 + x * u) ** 2
        sp = np.dot(self._w, u * u / D2) / np.dot(self._w, 1.0 / D2)
        return self.kappa * s, self.kappa * float(sp)

    def g_value(self, x: float) -> float:
        """``kappa * int_0^x s(t) dt`` by adaptive quadrature."""
        x = self._check(x)
        if x == 0.0:
            return 0.0
        if self.degenerate:
            return self.kappa * self.mean * x
        val, err = integrate.quad(self._solve_s, 0.0, x, epsabs=1e-13, epsrel=1e-12, limit=200)
        if not np.isfinite(val):
            raise NumericError(f"G quadrature failed at x = {x!r}")
        return self.kappa * val

    def g_value_extremization(self, x: float) -> float:
        """Independent evaluation through the extremum over ``Lam``.

        ``G(x) = kappa * [extr_Lam {-int rho ln|Lam - lam| + Lam x} - ln|x| - 1]``;
        the bracketed function is convex in ``Lam`` on either side of the
        support, so the extremum is a bounded minimization.  With
        ``Lam = 1/x + s`` it reads ``-int rho ln(1 + x (s - lam)) + x s``, which
        stays well conditioned as ``x -> 0``; the minimizer lies in
        ``[lower, upper]`` and on the far side of the pole of the logarithm.
        """
        x = self._check(x)
        if x == 0.0:
            return 0.0
        lam, w = self._lam, self._w

        def f(s):
            # 1 + x (s - lam) > 0 throughout the bracket; log1p keeps tiny x exact.
            with np.errstate(divide="ignore", invalid="ignore"):
                v = -np.dot(w, np.log1p(x * (s - lam))) + x * s
            return v if np.isfinite(v) else np.inf

        lo, hi = self.lower, self.upper
        if x > 0:
            lo = max(lo, self.upper - 1.0 / x)
        else:
            hi = min(hi, self.lower + 1.0 / (-x))
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            return self.kappa * f(0.5 * (lo + hi))
        # Brent's bounded search; the value error is quadratic in the s error.
        with np.errstate(over="ignore", invalid="ignore"):
            res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-13 * max(1.0, hi - lo, abs(lo))})
        return self.kappa * f(res.x)

    def tabulate(self, xs) -> GTable:
        xs = np.asarray(xs, dtype=float)
        G = np.array([self.g_value(x) for x in xs])
        d = np.array([self.g_derivs(x) for x in xs]).reshape(-1, 2)
        Lam = np.array([self.lambda_of_x(x) if x != 0 else np.inf for x in xs])
        ext = np.array([self.g_value_extremization(x) for x in xs])
        return GTable(xs, G, d[:, 0], d[:, 1], Lam, np.abs(G - ext))

    def sweep_points(self, n: int = 50, margin: float = 0.02, x_cap: float = 20.0) -> np.ndarray:
        """``n`` arguments spread over the (capped) domain, including 0."""
        lo = max(self.domain[0], -x_cap) * (1 - margin)
        hi = min(self.domain[1], x_cap) * (1 - margin)
        n_neg = n // 2
        pts = np.concatenate([np.linspace(lo, 0.0, n_neg + 1)[:-1], [0.0],
                              np.linspace(0.0, hi, n - n_neg)[1:]])
        return pts


def g_from_spectrum(spectrum: Spectrum, field: str = "complex") -> GFunction:
    return GFunction(spectrum, field)


__all__ = ["GFunction", "GTable", "FIELD_PREFACTOR", "g_from_spectrum", "spectrum_mean"]
