"""Channel ensembles: correlation matrices, channel sampling and transmission.

The channel is ``r = H b + sqrt(N0) * eta`` with ``H`` an ``L x K`` matrix.
Under the Kronecker model ``H = sqrt(R_r) Z sqrt(R_t)`` where the entries of
``Z`` have variance ``1/L``.  Complex entries are circularly symmetric with
``1/(2L)`` on each axis; real entries carry the full ``1/L``.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field as dc_field
from typing import Union

import numpy as np

from .errors import DomainError

Correlation = Union[float, np.ndarray]

FIELDS = ("real", "complex")
KINDS = ("iid", "kronecker")
SUPPORTED_S = (2, 4)


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator (Philox) seeded with a 64-bit integer or SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    if seed is None or int(seed) < 0:
        raise DomainError(f"seed must be a non-negative integer, got {seed!r}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def toeplitz_matrix(n: int, c: float) -> np.ndarray:
    """Correlation matrix with entries ``c**|i-j|``."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if not 0.0 <= c < 1.0:
        raise DomainError(f"correlation parameter must lie in [0, 1), got {c}")
    idx = np.arange(n)
    lag = np.abs(idx[:, None] - idx[None, :])
    if c == 0.0:
        return (lag == 0).astype(float)
    return c ** lag


def psd_sqrt(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Hermitian PSD square root via eigendecomposition.

    Eigenvalues in ``[-rtol * ||M||, 0)`` are clamped to zero; anything more
    negative raises :class:`DomainError`.
    """
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {M.shape}")
    if not np.allclose(M, M.conj().T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise DomainError("matrix is not Hermitian")
    off = M - np.diag(np.diag(M))
    if not np.any(off):
        d = np.real(np.diag(M))
        if d.min() < -rtol * max(1.0, np.abs(d).max()):
            raise DomainError(f"matrix is not PSD (min eigenvalue {d.min():.3e})")
        return np.diag(np.sqrt(np.clip(d, 0.0, None))).astype(M.dtype)
    w, V = np.linalg.eigh(M)
    scale = max(np.abs(w).max(), 1e-300)
    if w.min() < -rtol * scale:
        raise DomainError(f"matrix is not PSD (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    S = (V * np.sqrt(w)) @ V.conj().T
    return 0.5 * (S + S.conj().T)


def _check_corr(c, n, name):
    if np.isscalar(c):
        c = float(c)
        if not 0.0 <= c < 1.0:
            raise DomainError(f"{name}: Toeplitz parameter must lie in [0, 1), got {c}")
        return c
    M = np.asarray(c)
    if M.shape != (n, n):
        raise DomainError(f"{name}: expected a {n}x{n} matrix, got {M.shape}")
    if not np.allclose(np.diag(M), 1.0, atol=1e-12):
        raise DomainError(f"{name}: correlation matrix must have unit diagonal")
    if not np.allclose(M, M.conj().T, atol=1e-12):
        raise DomainError(f"{name}: correlation matrix must be Hermitian")
    w = np.linalg.eigvalsh(M)
    if w.min() < -1e-10 * max(1.0, w.max()):
        raise DomainError(f"{name}: correlation matrix must be PSD")
    return M


@dataclass(frozen=True)
class EnsembleSpec:
    """Description of a channel ensemble.

    ``corr_t`` / ``corr_r`` are either a Toeplitz parameter in ``[0, 1)`` or an
    explicit ``K x K`` / ``L x L`` correlation matrix with unit diagonal.
    They are ignored (treated as 0) for ``kind="iid"``.
    """

    K: int
    L: int
    field: str = "complex"
    kind: str = "iid"
    corr_t: Correlation = 0.0
    corr_r: Correlation = 0.0

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise DomainError(f"K must be a positive integer, got {self.K}")
        if int(self.L) != self.L or self.L < 1:
            raise DomainError(f"L must be a positive integer, got {self.L}")
        if self.field not in FIELDS:
            raise DomainError(f"field must be one of {FIELDS}, got {self.field!r}")
        if self.kind not in KINDS:
            raise DomainError(f"kind must be one of {KINDS}, got {self.kind!r}")
        object.__setattr__(self, "corr_t", _check_corr(self.corr_t, self.K, "corr_t"))
        object.__setattr__(self, "corr_r", _check_corr(self.corr_r, self.L, "corr_r"))

    @property
    def beta(self) -> float:
        return self.K / self.L

    @property
    def is_complex(self) -> bool:
        return self.field == "complex"

    def transmit_correlation(self) -> np.ndarray:
        if self.kind == "iid":
            return np.eye(self.K)
        c = self.corr_t
        return toeplitz_matrix(self.K, c) if np.isscalar(c) else np.asarray(c)

    def receive_correlation(self) -> np.ndarray:
        if self.kind == "iid":
            return np.eye(self.L)
        c = self.corr_r
        return toeplitz_matrix(self.L, c) if np.isscalar(c) else np.asarray(c)

    def describe(self) -> dict:
        def enc(c):
            return float(c) if np.isscalar(c) else "matrix"

        return {
            "K": self.K, "L": self.L, "beta": self.beta, "field": self.field,
            "kind": self.kind, "corr_t": enc(self.corr_t), "corr_r": enc(self.corr_r),
        }


@dataclass(frozen=True)
class ChannelInstance:
    H: np.ndarray
    spec: EnsembleSpec
    seed: int = -1

    def __post_init__(self):
        if self.H.shape != (self.spec.L, self.spec.K):
            raise DomainError(f"H has shape {self.H.shape}, spec wants {(self.spec.L, self.spec.K)}")
        if not np.all(np.isfinite(self.H)):
            raise DomainError("H has non-finite entries")


@dataclass(frozen=True)
class InputVector:
    b: np.ndarray
    S: int
    index: np.ndarray = dc_field(default=None, repr=False)  # phase index s of each entry


@dataclass(frozen=True)
class ReceivedVector:
    r: np.ndarray
    N0: float


def constellation(S: int) -> np.ndarray:
    """Points ``exp(2*pi*i*s/S)``; exact values for S = 2, 4."""
    if S == 2:
        return np.array([1.0 + 0j, -1.0 + 0j])
    if S == 4:
        return np.array([1.0 + 0j, 1j, -1.0 + 0j, -1j])
    raise DomainError(f"constellation size must be one of {SUPPORTED_S}, got {S}")


def _gaussian(rng, shape, var, complex_):
    if complex_:
        s = np.sqrt(var / 2.0)
        return s * rng.standard_normal(shape) + 1j * (s * rng.standard_normal(shape))
    return np.sqrt(var) * rng.standard_normal(shape)


def sample_channel(spec: EnsembleSpec, seed) -> ChannelInstance:
    """Draw ``H = sqrt(R_r) Z sqrt(R_t)``; ``iid`` skips the correlation factors."""
    rng = make_rng(seed)
    Z = _gaussian(rng, (spec.L, spec.K), 1.0 / spec.L, spec.is_complex)
    if spec.kind == "iid":
        H = Z
    else:
        H = psd_sqrt(spec.receive_correlation()) @ Z @ psd_sqrt(spec.transmit_correlation())
        if not spec.is_complex:
            H = np.real(H)
    return ChannelInstance(H=H, spec=spec, seed=seed if np.isscalar(seed) else -1)


def sample_input(K: int, S: int, seed, field: str = "complex") -> InputVector:
    if K < 1:
        raise DomainError(f"K must be >= 1, got {K}")
    if field == "real" and S != 2:
        raise DomainError("the real field only supports S = 2")
    pts = constellation(S)
    idx = make_rng(seed).integers(0, S, size=K)
    b = pts[idx]
    if field == "real":
        b = b.real.copy()
    return InputVector(b=b, S=S, index=idx)


def transmit(inst: ChannelInstance, b, N0: float, seed) -> ReceivedVector:
    """``r = H b + sqrt(N0) eta``; eta is unit-variance in the channel's field."""
    if N0 < 0:
        raise DomainError(f"N0 must be >= 0, got {N0}")
    bv = b.b if isinstance(b, InputVector) else np.asarray(b)
    if bv.shape != (inst.spec.K,):
        raise DomainError(f"input has shape {bv.shape}, expected ({inst.spec.K},)")
    r = inst.H @ bv
    if N0 > 0:
        eta = _gaussian(make_rng(seed), (inst.spec.L,), 1.0, inst.spec.is_complex)
        r = r + np.sqrt(N0) * eta
    return ReceivedVector(r=r, N0=float(N0))


def matrix_to_csv(M: np.ndarray) -> str:
    """Row-major CSV with a ``# rows cols field`` header."""
    M = np.atleast_2d(M)
    cplx = np.iscomplexobj(M)
    buf = io.StringIO()
    buf.write(f"# {M.shape[0]} {M.shape[1]} {'complex' if cplx else 'real'}\n")
    for row in M:
        if cplx:
            buf.write(",".join(f"{float(z.real)!r}{float(z.imag):+.17g}j" for z in row))
        else:
            buf.write(",".join(repr(float(v)) for v in row))
        buf.write("\n")
    return buf.getvalue()


def matrix_from_csv(text: str) -> np.ndarray:
    lines = [ln for ln in text.strip().splitlines()]
    rows, cols, fld = lines[0].lstrip("#").split()
    dtype = complex if fld == "complex" else float
    data = np.array([[dtype(v) for v in ln.split(",")] for ln in lines[1:]], dtype=dtype)
    if data.shape != (int(rows), int(cols)):
        raise DomainError(f"CSV body has shape {data.shape}, header says {rows}x{cols}")
    return data
