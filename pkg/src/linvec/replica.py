"""Replica-symmetric and one-step RSB saddle points built on a G-function.

All formulas are written once for both fields; the real-channel factor 1/2
lives in :class:`~linvec.gfunc.GFunction`.  Gaussian measures use unit
variance per axis.  For ``S = 2`` only the real axis of ``zeta`` enters, so
the integrals are one-dimensional in either field; ``S = 4`` integrates over
both axes.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import integrate, special, stats

from .ensemble import SUPPORTED_S, constellation
from .errors import ConvergenceError, DomainError, NumericError
from .gfunc import GFunction
from .quadrature import PANEL_ORDER, composite_gauss, gauss_hermite_nodes, scaled_rule

CLAMP = 0.999
RSB_GH_ORDER = 20   # per axis, S = 4 nested integrals


class ClampWarning(RuntimeWarning):
    """A G-function argument left the domain and was pulled back inside."""


# --------------------------------------------------------------------- types
@dataclass(frozen=True)
class NoiseSetting:
    N0: float
    Nr: float

    def __post_init__(self):
        if not (self.N0 > 0 and self.Nr > 0) or not np.isfinite(self.N0 + self.Nr):
            raise DomainError(f"N0 and Nr must be positive, got N0={self.N0}, Nr={self.Nr}")

    @property
    def nishimori(self) -> bool:
        return self.N0 == self.Nr

    @classmethod
    def matched(cls, N0: float) -> "NoiseSetting":
        return cls(N0, N0)


def _check_unit(name, v, tol=1e-9):
    if not (-tol <= v <= 1 + tol) or not np.isfinite(v):
        raise DomainError(f"{name} must lie in [0, 1], got {v}")
    return float(min(max(v, 0.0), 1.0))


@dataclass(frozen=True)
class RSOrderParams:
    m: float
    q: float
    m_hat: float
    q_hat: float

    def __post_init__(self):
        object.__setattr__(self, "m", _check_unit("m", self.m))
        object.__setattr__(self, "q", _check_unit("q", self.q))
        if not self.q_hat >= -1e-12 or not np.isfinite(self.m_hat):
            raise DomainError(f"q_hat must be >= 0, got {self.q_hat}")
        object.__setattr__(self, "q_hat", max(float(self.q_hat), 0.0))
        object.__setattr__(self, "m_hat", float(self.m_hat))

    def as_array(self) -> np.ndarray:
        return np.array([self.m, self.q, self.m_hat, self.q_hat])


@dataclass(frozen=True)
class OneRSBOrderParams:
    m: float
    q: float
    m_hat: float
    q_hat: float
    delta: float
    delta_hat: float
    x: float

    def __post_init__(self):
        if not 0 < self.x <= 1:
            raise DomainError(f"breaking parameter x must lie in (0, 1], got {self.x}")
        for name in ("m", "q"):
            object.__setattr__(self, name, _check_unit(name, getattr(self, name)))
        if not self.delta >= -1e-12 or self.q + self.delta > 1 + 1e-9:
            raise DomainError(f"need delta >= 0 and q + delta <= 1, got q={self.q}, delta={self.delta}")
        object.__setattr__(self, "delta", min(max(float(self.delta), 0.0), 1.0 - self.q))
        for name in ("q_hat", "delta_hat"):
            v = getattr(self, name)
            if not v >= -1e-12:
                raise DomainError(f"{name} must be >= 0, got {v}")
            object.__setattr__(self, name, max(float(v), 0.0))
        object.__setattr__(self, "m_hat", float(self.m_hat))

    @property
    def rs(self) -> RSOrderParams:
        return RSOrderParams(self.m, self.q, self.m_hat, self.q_hat)

    @classmethod
    def from_rs(cls, p: RSOrderParams, x: float, delta: float = 0.0, delta_hat: float = 0.0):
        return cls(p.m, p.q, p.m_hat, p.q_hat, delta, delta_hat, x)

    def as_array(self) -> np.ndarray:
        return np.array([self.m, self.q, self.m_hat, self.q_hat, self.delta, self.delta_hat])


@dataclass(frozen=True)
class RSSolution:
    params: RSOrderParams
    iterations: int
    residual: float
    free_energy: float
    ber: float
    at_lhs: float
    label: str = ""

    @property
    def at_stable(self) -> bool:
        return self.at_lhs < 1.0


@dataclass(frozen=True)
class RSBranches:
    """Fixed points reached from cold (m = q = 0) and warm (m = q = 1) starts."""

    cold: Optional[RSSolution]
    warm: Optional[RSSolution]

    @property
    def coexist(self) -> bool:
        return (self.cold is not None and self.warm is not None
                and abs(self.cold.params.m - self.warm.params.m) > 1e-6)

    @property
    def selected(self) -> RSSolution:
        """Branch with the larger value of the free-energy extremand."""
        sols = [s for s in (self.cold, self.warm) if s is not None]
        if not sols:
            raise ConvergenceError("neither branch converged")
        return max(sols, key=lambda s: (s.free_energy, s.label == "warm"))


@dataclass(frozen=True)
class RSBSolution:
    params: OneRSBOrderParams
    iterations: int
    residual: float
    free_energy: float


# ------------------------------------------------------------ local averages
def _dim(S: int) -> int:
    if S not in SUPPORTED_S:
        raise DomainError(f"constellation size must be one of {SUPPORTED_S}, got {S}")
    return 1 if S == 2 else 2


def _local(a, S: int):
    """Log partition sum and mean of ``tau`` under weights ``exp Re(a tau)``."""
    if S == 2:
        a = np.real(a)
        return np.logaddexp(a, -a), np.tanh(a)
    tau = constellation(S)
    E = np.real(a[..., None] * tau)
    lse = special.logsumexp(E, axis=-1)
    p = np.exp(E - lse[..., None])
    return lse, p @ tau


@dataclass(frozen=True)
class RSAverages:
    m: float
    q: float
    log_sum: float     # int Dzeta ln sum_tau exp Re(a tau)
    at_integral: float  # int Dzeta (1 - |<tau>|^2)^2


def rs_averages(m_hat: float, q_hat: float, S: int) -> RSAverages:
    """Gaussian averages over ``a = sqrt(q_hat) zeta + m_hat``."""
    dim = _dim(S)
    sq = np.sqrt(max(q_hat, 0.0))
    z, w = scaled_rule(sq, dim)
    lse, mean = _local(sq * z + m_hat, S)
    abs2 = np.abs(mean) ** 2
    return RSAverages(
        m=float(np.dot(w, np.real(mean))),
        q=float(np.dot(w, abs2)),
        log_sum=float(np.dot(w, lse)),
        at_integral=float(np.dot(w, (1.0 - abs2) ** 2)),
    )


# ------------------------------------------------------------- G arguments
def _arg(g: GFunction, x: float, clamp: bool):
    lo, hi = g.domain
    if lo < x < hi:
        return x, False
    if not clamp:
        raise DomainError(f"G-function argument {x} outside domain {g.domain}")
    return (CLAMP * lo if x <= lo else CLAMP * hi), True


def _warn_clamp(x):
    warnings.warn(f"G-function argument {x:.6g} clamped into the domain", ClampWarning, stacklevel=3)


def _rs_hats(g: GFunction, noise: NoiseSetting, m: float, q: float, clamp: bool = True):
    x1, clamped = _arg(g, -(1.0 - q) / noise.Nr, clamp)
    Gp, Gpp = g.g_derivs(x1)
    Nr, N0 = noise.Nr, noise.N0
    A = -(1.0 - 2.0 * m + q) / Nr + N0 * (1.0 - q) / Nr ** 2
    m_hat = 2.0 * Gp / Nr
    q_hat = 2.0 * N0 * Gp / Nr ** 2 - 2.0 * A * Gpp / Nr
    if q_hat < 0:
        if q_hat < -1e-12 * (1.0 + abs(m_hat)):
            raise NumericError(f"q_hat became negative ({q_hat:.3e}) at m={m}, q={q}")
        q_hat = 0.0
    return m_hat, q_hat, clamped


def _rs_step(g, S, noise, p: RSOrderParams, damping: float):
    m_hat, q_hat, clamped = _rs_hats(g, noise, p.m, p.q)
    m_hat = p.m_hat + damping * (m_hat - p.m_hat)
    q_hat = p.q_hat + damping * (q_hat - p.q_hat)
    av = rs_averages(m_hat, q_hat, S)
    m = p.m + damping * (av.m - p.m)
    q = p.q + damping * (av.q - p.q)
    return RSOrderParams(m, q, m_hat, q_hat), clamped


def rs_update(g: GFunction, S: int, noise: NoiseSetting, p: RSOrderParams,
              damping: float = 1.0) -> RSOrderParams:
    """One damped sweep: conjugates ``(m_hat, q_hat)`` first, then ``(m, q)``."""
    if not 0 < damping <= 1:
        raise DomainError(f"damping must lie in (0, 1], got {damping}")
    new, clamped = _rs_step(g, S, noise, p, damping)
    if clamped:
        _warn_clamp(-(1.0 - p.q) / noise.Nr)
    return new


def cold_start() -> RSOrderParams:
    return RSOrderParams(0.0, 0.0, 0.0, 0.0)


def warm_start() -> RSOrderParams:
    return RSOrderParams(1.0, 1.0, 0.0, 0.0)


def rs_solve(g: GFunction, S: int, noise: NoiseSetting, init: Optional[RSOrderParams] = None,
             damping: float = 0.7, tol: float = 1e-12, max_iter: int = 20000,
             label: str = "") -> RSSolution:
    """Iterate :func:`rs_update` to a fixed point.

    Convergence means the largest change of ``(m, q, m_hat, q_hat)`` in one
    sweep is below ``tol``.  A fixed point whose G argument needed clamping is
    rejected.

    Raises
    ------
    ConvergenceError
        With the final residual and the last few iterates.
    """
    if not 0 < damping <= 1:
        raise DomainError(f"damping must lie in (0, 1], got {damping}")
    if tol <= 0 or max_iter < 1:
        raise DomainError("tol must be > 0 and max_iter >= 1")
    p = init if init is not None else cold_start()
    tail = []
    res = np.inf
    clamped = False
    for it in range(1, max_iter + 1):
        new, clamped = _rs_step(g, S, noise, p, damping)
        res = float(np.max(np.abs(new.as_array() - p.as_array())))
        p = new
        tail.append(p)
        if len(tail) > 5:
            tail.pop(0)
        if res < tol:
            break
    else:
        raise ConvergenceError(f"RS iteration did not converge in {max_iter} sweeps "
                               f"(residual {res:.3e})", residual=res, tail=tail)
    if clamped:
        raise ConvergenceError("RS fixed point sits on the clamped G-domain boundary",
                               residual=res, tail=tail)
    return RSSolution(p, it, res, rs_free_energy(g, S, noise, p), bit_error_rate(p, S, g.field),
                      at_stability(g, noise, p, S)[0], label)


def rs_branches(g: GFunction, S: int, noise: NoiseSetting, **kw) -> RSBranches:
    """Solve from cold and warm starts; a failed branch is reported as ``None``.

    A start can fail when its transient leaves the admissible region (for
    instance a negative ``q_hat`` under strongly mismatched noise).
    """
    out = {}
    for label, init in (("cold", cold_start()), ("warm", warm_start())):
        try:
            out[label] = rs_solve(g, S, noise, init=init, label=label, **kw)
        except (ConvergenceError, NumericError):
            out[label] = None
    if out["cold"] is None and out["warm"] is None:
        raise ConvergenceError("RS iteration failed from both cold and warm starts")
    return RSBranches(out["cold"], out["warm"])


def rs_free_energy(g: GFunction, S: int, noise: NoiseSetting, p: RSOrderParams) -> float:
    """RS value of ``(1/K) <ln Z>`` before extremization, evaluated at ``p``."""
    Nr, N0 = noise.Nr, noise.N0
    x1, _ = _arg(g, -(1.0 - p.q) / Nr, clamp=False)
    A = -(1.0 - 2.0 * p.m + p.q) / Nr + N0 * (1.0 - p.q) / Nr ** 2
    av = rs_averages(p.m_hat, p.q_hat, S)
    return (g.g_value(x1) + A * g.g_prime(x1) - p.m_hat * p.m
            - 0.5 * p.q_hat * (1.0 - p.q) + av.log_sum)


def bit_error_rate(p: RSOrderParams, S: int, field: str = "complex") -> float:
    """Probability that ``tau = 1`` does not maximize ``Re((sqrt(q_hat) zeta* + m_hat) tau)``."""
    _dim(S)
    if field == "real" and S != 2:
        raise DomainError("the real field only supports S = 2")
    m_hat, q_hat = p.m_hat, p.q_hat
    if q_hat == 0.0:
        return 0.0 if m_hat > 0 else (S - 1) / S
    r = m_hat / np.sqrt(q_hat)
    if S == 2:
        return float(stats.norm.cdf(-r))
    # Wrong iff zeta_R + r < |zeta_I|; integrate the error region directly so
    # tiny probabilities keep their relative accuracy.  The integrand peaks
    # near zeta_I = r / 2.
    f = lambda y: 2.0 * stats.norm.pdf(y) * stats.norm.cdf(y - r)
    pe, _ = integrate.quad(f, 0.0, 40.0, points=[min(0.5 * r, 39.0)], epsabs=0.0,
                           epsrel=1e-12, limit=400)
    return float(min(max(pe, 0.0), 1.0))


def at_stability(g: GFunction, noise: NoiseSetting, p: RSOrderParams, S: int):
    """Return ``(lhs, stable)`` for the local stability test of the RS point."""
    x1, _ = _arg(g, -(1.0 - p.q) / noise.Nr, clamp=False)
    _, Gpp = g.g_derivs(x1)
    lhs = 2.0 / noise.Nr ** 2 * Gpp * rs_averages(p.m_hat, p.q_hat, S).at_integral
    return float(lhs), bool(lhs < 1.0)


# ------------------------------------------------------------------- 1RSB
@dataclass(frozen=True)
class RSBAverages:
    m: float
    q: float
    q_delta: float   # q + Delta
    log_term: float  # (1/x) int Dzeta ln int Deta Xi^x


def _inner_rule(S: int, delta_hat: float, x: float):
    if S == 2:
        sd = np.sqrt(delta_hat)
        reach = 9.0 + x * sd
        return composite_gauss(-reach, reach, min(1.0, 1.0 / max(sd, 1e-300)), PANEL_ORDER)
    return gauss_hermite_nodes(RSB_GH_ORDER, "complex")


def rsb_averages(m_hat: float, q_hat: float, delta_hat: float, x: float, S: int) -> RSBAverages:
    """Nested averages with the inner measure tilted by ``Xi**x`` (log space)."""
    dim = _dim(S)
    sq = np.sqrt(q_hat)
    if delta_hat == 0.0:
        av = rs_averages(m_hat, q_hat, S)
        return RSBAverages(av.m, av.q, av.q, av.log_sum)
    if S == 2:
        z, wz = scaled_rule(sq, dim)
    else:
        z, wz = gauss_hermite_nodes(RSB_GH_ORDER, "complex")
    eta, weta = _inner_rule(S, delta_hat, x)
    a = m_hat + sq * z[:, None] + np.sqrt(delta_hat) * eta[None, :]
    lse, mean = _local(a, S)
    logw = x * lse + np.log(weta)[None, :]
    norm = special.logsumexp(logw, axis=1)
    pw = np.exp(logw - norm[:, None])
    M1 = np.sum(pw * mean, axis=1)
    M2 = np.sum(pw * np.abs(mean) ** 2, axis=1)
    return RSBAverages(
        m=float(np.dot(wz, np.real(M1))),
        q=float(np.dot(wz, np.abs(M1) ** 2)),
        q_delta=float(np.dot(wz, M2)),
        log_term=float(np.dot(wz, norm)) / x,
    )


def _rsb_args(noise, q, delta, x):
    x1 = -(1.0 - q + (x - 1.0) * delta) / noise.Nr
    x0 = -(1.0 - q - delta) / noise.Nr
    return x1, x0


def _rsb_hats(g, noise, p: OneRSBOrderParams, clamp=True):
    Nr, N0, x = noise.Nr, noise.N0, p.x
    a1, a0 = _rsb_args(noise, p.q, p.delta, x)
    x1, c1 = _arg(g, a1, clamp)
    x0, c0 = _arg(g, a0, clamp)
    Gp1, Gpp1 = g.g_derivs(x1)
    Gp0 = g.g_prime(x0)
    A = -(1.0 - 2.0 * p.m + p.q) / Nr + N0 * (1.0 - p.q + (x - 1.0) * p.delta) / Nr ** 2
    m_hat = 2.0 * Gp1 / Nr
    q_hat = 2.0 * N0 * Gp1 / Nr ** 2 - 2.0 * A * Gpp1 / Nr
    delta_hat = 2.0 * (Gp0 - Gp1) / (x * Nr)
    if q_hat < -1e-12 * (1.0 + abs(m_hat)):
        raise NumericError(f"q_hat became negative ({q_hat:.3e})")
    return m_hat, max(q_hat, 0.0), max(delta_hat, 0.0), c1 or c0


def _rsb_step(g, S, noise, p: OneRSBOrderParams, damping):
    m_hat, q_hat, delta_hat, clamped = _rsb_hats(g, noise, p)
    d = damping
    m_hat = p.m_hat + d * (m_hat - p.m_hat)
    q_hat = p.q_hat + d * (q_hat - p.q_hat)
    delta_hat = p.delta_hat + d * (delta_hat - p.delta_hat)
    av = rsb_averages(m_hat, q_hat, delta_hat, p.x, S)
    m = p.m + d * (av.m - p.m)
    q = p.q + d * (av.q - p.q)
    delta = p.delta + d * ((av.q_delta - av.q) - p.delta)
    q = min(max(q, 0.0), 1.0)
    delta = min(max(delta, 0.0), 1.0 - q)
    return OneRSBOrderParams(m, q, m_hat, q_hat, delta, delta_hat, p.x), clamped


def rsb_update(g: GFunction, S: int, noise: NoiseSetting, p: OneRSBOrderParams,
               damping: float = 1.0) -> OneRSBOrderParams:
    """One damped sweep over all six parameters (conjugates first)."""
    if not 0 < damping <= 1:
        raise DomainError(f"damping must lie in (0, 1], got {damping}")
    new, clamped = _rsb_step(g, S, noise, p, damping)
    if clamped:
        _warn_clamp(_rsb_args(noise, p.q, p.delta, p.x)[0])
    return new


def rsb_solve(g: GFunction, S: int, noise: NoiseSetting, x: float,
              init: Optional[OneRSBOrderParams] = None, damping: float = 0.7,
              tol: float = 1e-12, max_iter: int = 20000) -> RSBSolution:
    """Damped fixed point of the 1RSB equations at breaking parameter ``x``.

    The default start is the cold RS start with ``Delta = 1e-3``.
    """
    if not 0 < damping <= 1:
        raise DomainError(f"damping must lie in (0, 1], got {damping}")
    if init is None:
        init = OneRSBOrderParams(0.0, 0.0, 0.0, 0.0, 1e-3, 0.0, x)
    elif init.x != x:
        init = replace(init, x=x)
    p = init
    tail, res, clamped = [], np.inf, False
    for it in range(1, max_iter + 1):
        new, clamped = _rsb_step(g, S, noise, p, damping)
        res = float(np.max(np.abs(new.as_array() - p.as_array())))
        p = new
        tail.append(p)
        if len(tail) > 5:
            tail.pop(0)
        if res < tol:
            break
    else:
        raise ConvergenceError(f"1RSB iteration did not converge in {max_iter} sweeps "
                               f"(residual {res:.3e})", residual=res, tail=tail)
    if clamped:
        raise ConvergenceError("1RSB fixed point sits on the clamped G-domain boundary",
                               residual=res, tail=tail)
    return RSBSolution(p, it, res, rsb_free_energy(g, S, noise, p))


def rsb_free_energy(g: GFunction, S: int, noise: NoiseSetting, p: OneRSBOrderParams) -> float:
    """1RSB value of ``(1/K) <ln Z>`` before extremization, evaluated at ``p``."""
    Nr, N0, x = noise.Nr, noise.N0, p.x
    a1, a0 = _rsb_args(noise, p.q, p.delta, x)
    x1, _ = _arg(g, a1, clamp=False)
    x0, _ = _arg(g, a0, clamp=False)
    G1 = g.g_value(x1)
    G0 = G1 if p.delta == 0.0 else g.g_value(x0)
    A = -(1.0 - 2.0 * p.m + p.q) / Nr + N0 * (1.0 - p.q + (x - 1.0) * p.delta) / Nr ** 2
    av = rsb_averages(p.m_hat, p.q_hat, p.delta_hat, x, S)
    qh, dh, q, d = p.q_hat, p.delta_hat, p.q, p.delta
    return (G0 + (G1 - G0) / x + A * g.g_prime(x1) - p.m_hat * p.m - 0.5 * (qh + dh)
            - 0.5 * (x - 1.0) * ((qh + dh) * (q + d) - qh * q) + 0.5 * qh * q + av.log_term)


__all__ = [
    "NoiseSetting", "RSOrderParams", "OneRSBOrderParams", "RSSolution", "RSBranches",
    "RSBSolution", "RSAverages", "RSBAverages", "ClampWarning", "rs_averages", "rs_update",
    "rs_solve", "rs_branches", "rs_free_energy", "bit_error_rate", "at_stability",
    "rsb_averages", "rsb_update", "rsb_solve", "rsb_free_energy", "gauss_hermite_nodes",
    "cold_start", "warm_start",
]
