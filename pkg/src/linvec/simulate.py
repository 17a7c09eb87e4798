"""Monte Carlo bit-error-rate estimation with posterior-marginal demodulators.

The receiver model is ``P(b | r) ~ exp(-|r - H b|^2 / N_r)`` for complex
channels and ``exp(-|r - H b|^2 / (2 N_r))`` for real ones, matching the
unit-variance noise conventions of :func:`linvec.ensemble.transmit`.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
from scipy import special, stats
from threadpoolctl import threadpool_limits

from .ensemble import (ChannelInstance, EnsembleSpec, ReceivedVector, constellation,
                       sample_channel, sample_input, transmit)
from .errors import CapacityError, DomainError
from .gfunc import GFunction
from .replica import NoiseSetting, rs_branches
from .spectrum import ensemble_spectrum

MAX_CONFIGS = 2 ** 24
METHODS = ("exact", "iterative")


@dataclass(frozen=True)
class DemodResult:
    """Per-component marginals over the constellation and their argmax."""

    b_hat: np.ndarray
    index: np.ndarray        # phase index of b_hat
    marginals: np.ndarray    # (K, S)
    method: str
    converged: bool = True
    iterations: int = 0


@dataclass(frozen=True)
class SimulationReport:
    trials: int
    bit_errors: int
    ber: float
    ci95: float
    theory_ber: Optional[float]
    spec: EnsembleSpec
    noise: NoiseSetting
    S: int
    method: str
    excluded: int = 0
    bit_errors_inclusive: int = 0
    ber_inclusive: float = 0.0
    ci_low: float = 0.0
    ci_high: float = 0.0
    per_trial_errors: tuple = dc_field(default=(), repr=False)

    def as_row(self) -> dict:
        return {
            "beta": self.spec.beta, "N0": self.noise.N0, "Nr": self.noise.Nr, "S": self.S,
            "method": self.method, "trials": self.trials, "errors": self.bit_errors,
            "ber": self.ber, "ci95": self.ci95,
            "theory_ber": np.nan if self.theory_ber is None else self.theory_ber,
            "excluded": self.excluded,
        }


def _field_factor(H) -> float:
    """Exponent scale of the Gaussian likelihood: 1 complex, 1/2 real."""
    return 1.0 if np.iscomplexobj(H) else 0.5


def _check_demod_args(inst, r, Nr, S):
    H = inst.H if isinstance(inst, ChannelInstance) else np.asarray(inst)
    rv = r.r if isinstance(r, ReceivedVector) else np.asarray(r)
    if H.ndim != 2 or rv.shape != (H.shape[0],):
        raise DomainError(f"received vector shape {rv.shape} does not match H {H.shape}")
    if not Nr > 0:
        raise DomainError(f"Nr must be positive, got {Nr}")
    if not np.iscomplexobj(H) and S != 2:
        raise DomainError("the real field only supports S = 2")
    return H, rv, constellation(S)


def _result(marg, pts, method, converged=True, iterations=0, real=False):
    idx = np.argmax(marg, axis=1)  # first maximum: smallest phase index
    b = pts[idx]
    return DemodResult(b.real.copy() if real else b, idx, marg, method, converged, iterations)


def mpm_exact(inst, r, Nr: float, S: int, chunk: int = 1 << 15) -> DemodResult:
    """Exhaustive marginal-posterior-mode demodulation.

    Every ``b`` in ``A_S^K`` is weighted in log space; marginals are
    accumulated chunk by chunk against a running maximum.
    """
    H, rv, pts = _check_demod_args(inst, r, Nr, S)
    L, K = H.shape
    if S ** K > MAX_CONFIGS:
        raise CapacityError(f"S**K = {S}**{K} exceeds {MAX_CONFIGS} configurations; "
                            "use mpm_iterative")
    c = _field_factor(H) / Nr
    total = S ** K
    powers = S ** np.arange(K - 1, -1, -1)
    acc = np.zeros((K, S))
    top = -np.inf
    for start in range(0, total, chunk):
        ids = np.arange(start, min(start + chunk, total))
        digits = (ids[:, None] // powers[None, :]) % S
        B = pts[digits]
        res = rv[None, :] - B @ H.T
        E = -c * np.sum(np.abs(res) ** 2, axis=1)
        m = E.max()
        if m > top:
            acc *= np.exp(top - m) if np.isfinite(top) else 0.0
            top = m
        p = np.exp(E - top)
        for s in range(S):
            acc[:, s] += (digits == s).T.astype(float) @ p
    marg = acc / acc.sum(axis=1, keepdims=True)
    return _result(marg, pts, "exact", real=not np.iscomplexobj(H))


def _tilted(m_cav, v, pts, c):
    """Moments of ``exp(2 c Re(m_cav^* tau) / v)`` over the constellation."""
    E = 2.0 * c * np.real(np.conj(m_cav)[:, None] * pts[None, :]) / v[:, None]
    E -= special.logsumexp(E, axis=1, keepdims=True)
    p = np.exp(E)
    a = p @ pts
    return p, a


def mpm_iterative(inst, r, Nr: float, S: int, max_iter: int = 200, damping: float = 0.7,
                  tol: float = 1e-7, min_var: float = 1e-10) -> DemodResult:
    """Approximate marginals by expectation propagation with diagonal site terms.

    Each component keeps a Gaussian site ``(lambda_k, h_k)``; the coupled
    Gaussian posterior supplies cavity means and variances, the discrete
    prior is moment-matched, and the sites are updated with damping.  This is
    the adaptive (Onsager-corrected) mean-field scheme for dense ``H``.
    Non-finite or non-settling iterations return ``converged=False``.
    """
    H, rv, pts = _check_demod_args(inst, r, Nr, S)
    if max_iter < 1 or not 0 < damping <= 1:
        raise DomainError("need max_iter >= 1 and damping in (0, 1]")
    real = not np.iscomplexobj(H)
    c = _field_factor(H)
    L, K = H.shape
    gram = (H.conj().T @ H) / Nr
    proj = (H.conj().T @ rv) / Nr
    lam = np.ones(K)
    h = np.zeros(K, dtype=H.dtype if not real else float)
    prev = None
    converged = False
    p = np.full((K, S), 1.0 / S)
    it = 0
    with np.errstate(all="ignore"):
        for it in range(1, max_iter + 1):
            P = gram + np.diag(lam)
            try:
                cho = np.linalg.cholesky(P)
            except np.linalg.LinAlgError:
                break
            inv_c = np.linalg.inv(cho)
            Sigma_diag = np.real(np.sum(np.abs(inv_c) ** 2, axis=0))
            mu = inv_c.conj().T @ (inv_c @ (proj + h))
            v = 1.0 / (1.0 / Sigma_diag - lam)
            bad = ~(v > 0) | ~np.isfinite(v)
            v = np.where(bad, Sigma_diag, v)
            m_cav = v * (mu / Sigma_diag - h)
            m_cav = np.where(bad, mu, m_cav)
            p, a = _tilted(m_cav, v, pts, c)
            s = np.maximum(1.0 - np.abs(a) ** 2, min_var)
            lam_new = np.maximum(1.0 / s - 1.0 / v, min_var)
            h_new = a / s - m_cav / v
            if not (np.all(np.isfinite(lam_new)) and np.all(np.isfinite(h_new))):
                break
            lam = lam + damping * (lam_new - lam)
            h = h + damping * (h_new - h)
            if prev is not None and np.max(np.abs(p - prev)) < tol:
                converged = True
                break
            prev = p
    if not np.all(np.isfinite(p)):
        p = np.full((K, S), 1.0 / S)
        converged = False
    return _result(p, pts, "iterative", converged, it, real=real)


def demodulate(inst, r, Nr, S, method: str = "iterative", **kw) -> DemodResult:
    if method == "exact":
        return mpm_exact(inst, r, Nr, S)
    if method == "iterative":
        return mpm_iterative(inst, r, Nr, S, **kw)
    raise DomainError(f"method must be one of {METHODS}, got {method!r}")


# -------------------------------------------------------------------- BER
def trial_seeds(seed: int, trial: int):
    """Independent streams for (channel, input, noise) of one trial."""
    return np.random.SeedSequence([int(seed), int(trial)]).spawn(3)


def _one_trial(spec, noise, S, seed, t, method, gauge, demod_kw):
    s_h, s_b, s_n = trial_seeds(seed, t)
    inst = sample_channel(spec, s_h)
    b0 = sample_input(spec.K, S, s_b, spec.field)
    if gauge:
        # Same instance seen through H diag(b0) with the all-ones input.
        H = inst.H * b0.b[None, :]
        inst = ChannelInstance(H, spec, inst.seed)
        truth = np.zeros(spec.K, dtype=int)
        sent = np.ones(spec.K, dtype=H.dtype)
    else:
        truth, sent = b0.index, b0.b
    rv = transmit(inst, sent, noise.N0, s_n)
    res = demodulate(inst, rv, noise.Nr, S, method, **demod_kw)
    return int(np.sum(res.index != truth)), res.converged


def wilson_interval(errors: int, n: int):
    ci = stats.binomtest(int(errors), int(n)).proportion_ci(0.95, method="wilson")
    return float(ci.low), float(ci.high)


def theory_ber(spec: EnsembleSpec, noise: NoiseSetting, S: int,
               n_points: int = 1200) -> float:
    """RS prediction for the ensemble on the selected (larger free energy) branch."""
    g = GFunction(ensemble_spectrum(spec, n_points), spec.field)
    return rs_branches(g, S, noise).selected.ber


def run_ber(spec: EnsembleSpec, noise: NoiseSetting, S: int, trials: int, seed: int,
            method: str = "iterative", threads: int = 1, gauge: bool = False,
            with_theory: bool = True, demod_kw: Optional[dict] = None) -> SimulationReport:
    """Estimate the component error rate over ``trials`` independent instances.

    Trial ``t`` draws its channel, input and noise from
    ``SeedSequence([seed, t])``, so serial and threaded runs agree exactly.
    ``ber`` excludes trials whose iterative demodulator did not converge;
    ``ber_inclusive`` counts them.
    """
    if trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")
    if method not in METHODS:
        raise DomainError(f"method must be one of {METHODS}, got {method!r}")
    if spec.field == "real" and S != 2:
        raise DomainError("the real field only supports S = 2")
    if threads < 1:
        raise DomainError(f"threads must be >= 1, got {threads}")
    if method == "exact" and S ** spec.K > MAX_CONFIGS:
        raise CapacityError(f"S**K = {S}**{spec.K} exceeds {MAX_CONFIGS}; use the iterative method")
    kw = dict(demod_kw or {})

    def job(t):
        return _one_trial(spec, noise, S, seed, t, method, gauge, kw)

    if threads == 1:
        out = [job(t) for t in range(trials)]
    else:
        with threadpool_limits(1), ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(job, range(trials)))
    errs = np.array([e for e, _ in out])
    ok = np.array([c for _, c in out])
    included = int(ok.sum())
    k_ex = int(errs[ok].sum())
    n_ex = included * spec.K
    k_in = int(errs.sum())
    if n_ex > 0:
        lo, hi = wilson_interval(k_ex, n_ex)
        ber = k_ex / n_ex
    else:
        lo, hi, ber = 0.0, 1.0, float("nan")
    th = theory_ber(spec, noise, S) if with_theory else None
    return SimulationReport(
        trials=trials, bit_errors=k_ex, ber=ber, ci95=0.5 * (hi - lo), theory_ber=th,
        spec=spec, noise=noise, S=S, method=method, excluded=trials - included,
        bit_errors_inclusive=k_in, ber_inclusive=k_in / (trials * spec.K),
        ci_low=lo, ci_high=hi, per_trial_errors=tuple(int(e) for e in errs),
    )


def ebn0_to_noise(ebn0_db: float, S: int, field: str) -> float:
    """Noise variance ``N0`` for a given ``E_b/N_0`` in dB.

    Unit-power symbols carry ``log2 S`` bits.  Complex noise of variance
    ``N0`` has one-sided density ``N0``; real noise of variance ``N0`` per
    dimension corresponds to a one-sided density ``2 N0``.
    """
    snr = 10.0 ** (ebn0_db / 10.0)
    if field == "real":
        if S != 2:
            raise DomainError("the real field only supports S = 2")
        return 1.0 / (2.0 * snr)
    return 1.0 / (np.log2(S) * snr)
