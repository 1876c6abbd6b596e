"""Truncated Fourier representation of the circle, the analytic semigroup
S_t = exp(t(Laplacian - Id)), fractional power scales, and pointwise products.

Fields are stored as complex coefficient arrays over modes n = -N..N (array
index k = n + N).  The generator has eigenvalues lam_n = 1 + (2 pi n)^2, so
every mode decays and all fractional powers lam_n^alpha are well defined.
Real-valued fields satisfy the conjugate symmetry c_{-n} = conj(c_n).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import toeplitz


class SpectralError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralParams:
    nmodes: int  # N; modes -N..N
    horizon: float = 1.0

    def __post_init__(self):
        if self.nmodes < 1:
            raise SpectralError("need at least one nonzero mode")

    @property
    def size(self) -> int:
        return 2 * self.nmodes + 1

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.nmodes, self.nmodes + 1)


@lru_cache(maxsize=64)
def _eigenvalues(nmodes: int) -> np.ndarray:
    n = np.arange(-nmodes, nmodes + 1)
    return 1.0 + (2.0 * np.pi * n) ** 2


def eigenvalues(params: SpectralParams) -> np.ndarray:
    """lam_n = 1 + (2 pi n)^2, the spectrum of Id - Laplacian on the circle."""
    return _eigenvalues(params.nmodes)


def decay_factors(params: SpectralParams, dt: float) -> np.ndarray:
    """Per-mode semigroup factors exp(-dt * lam_n)."""
    if dt < 0:
        raise SpectralError(f"semigroup time must be >= 0, got {dt}")
    return np.exp(-dt * eigenvalues(params))


def phi1_factors(params: SpectralParams, dt: float) -> np.ndarray:
    """Per-mode (1 - exp(-dt lam_n)) / lam_n, the exact cell integral of S."""
    lam = eigenvalues(params)
    return -np.expm1(-dt * lam) / lam


@dataclass
class SpectralField:
    params: SpectralParams
    coeffs: np.ndarray
    alpha: float = 0.0  # regularity tag: the B_alpha space this field is measured in

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (self.params.size,):
            raise SpectralError(f"expected {self.params.size} coefficients, got {c.shape}")
        self.coeffs = c

    @classmethod
    def zero(cls, params: SpectralParams, alpha: float = 0.0):
        return cls(params, np.zeros(params.size, dtype=complex), alpha)

    @classmethod
    def basis(cls, params: SpectralParams, mode: int, alpha: float = 0.0):
        c = np.zeros(params.size, dtype=complex)
        c[mode + params.nmodes] = 1.0
        return cls(params, c, alpha)

    def project_real(self) -> "SpectralField":
        """Re-impose the conjugate symmetry c_{-n} = conj(c_n)."""
        c = self.coeffs
        sym = 0.5 * (c + np.conj(c[::-1]))
        return SpectralField(self.params, sym, self.alpha)

    def is_real(self, tol: float = 1e-12) -> bool:
        c = self.coeffs
        return bool(np.max(np.abs(c - np.conj(c[::-1]))) <= tol * max(1.0, np.max(np.abs(c))))

    def __add__(self, other):
        return SpectralField(self.params, self.coeffs + other.coeffs, self.alpha)

    def __sub__(self, other):
        return SpectralField(self.params, self.coeffs - other.coeffs, self.alpha)

    def __mul__(self, scalar):
        return SpectralField(self.params, self.coeffs * scalar, self.alpha)

    __rmul__ = __mul__


@dataclass
class SpectralOperator:
    params: SpectralParams
    matrix: np.ndarray
    beta: float = 0.0  # source regularity
    alpha: float = 0.0  # target regularity

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        sz = self.params.size
        if m.shape != (sz, sz):
            raise SpectralError(f"expected {sz}x{sz} matrix, got {m.shape}")
        self.matrix = m

    @classmethod
    def identity(cls, params: SpectralParams, beta=0.0, alpha=0.0):
        return cls(params, np.eye(params.size, dtype=complex), beta, alpha)

    @classmethod
    def zero(cls, params: SpectralParams, beta=0.0, alpha=0.0):
        return cls(params, np.zeros((params.size, params.size), dtype=complex), beta, alpha)

    def apply(self, phi: SpectralField) -> SpectralField:
        return SpectralField(self.params, self.matrix @ phi.coeffs, self.alpha)

    def __add__(self, other):
        return SpectralOperator(self.params, self.matrix + other.matrix, self.beta, self.alpha)

    def __sub__(self, other):
        return SpectralOperator(self.params, self.matrix - other.matrix, self.beta, self.alpha)

    def __matmul__(self, other):
        return SpectralOperator(self.params, self.matrix @ other.matrix, other.beta, self.alpha)

    def __mul__(self, scalar):
        return SpectralOperator(self.params, self.matrix * scalar, self.beta, self.alpha)

    __rmul__ = __mul__


def multiplication_operator(phi: SpectralField) -> SpectralOperator:
    """Pointwise multiplication by phi as a banded Toeplitz matrix over modes."""
    p = phi.params
    n = p.nmodes
    c = phi.coeffs
    col = np.concatenate([c[n:], np.zeros(n, dtype=complex)])
    row = np.concatenate([c[n::-1], np.zeros(n, dtype=complex)])
    return SpectralOperator(p, toeplitz(col, row))


# ---------------------------------------------------------------------------
# semigroup


def semigroup_apply(t: float, obj, alpha_shift: float = 0.0):
    """Apply A_o^{alpha_shift} S_t:  mode n is scaled by lam_n^{alpha_shift} e^{-t lam_n}.

    For operators the scaling acts on the target side (rows).
    """
    if t < 0:
        raise SpectralError(f"semigroup time must be >= 0, got {t}")
    if t == 0 and alpha_shift > 0:
        raise SpectralError("A_o^a with a > 0 is unbounded; need t > 0")
    params = obj.params
    lam = eigenvalues(params)
    fac = lam**alpha_shift * np.exp(-t * lam)
    if isinstance(obj, SpectralField):
        return SpectralField(params, fac * obj.coeffs, obj.alpha + alpha_shift)
    if isinstance(obj, SpectralOperator):
        return SpectralOperator(params, fac[:, None] * obj.matrix, obj.beta, obj.alpha)
    raise TypeError(f"semigroup_apply not defined for {type(obj)!r}")


def semigroup_right(t: float, op: SpectralOperator) -> SpectralOperator:
    """Compose with the semigroup on the source side: op . S_t (columns scaled)."""
    if t < 0:
        raise SpectralError(f"semigroup time must be >= 0, got {t}")
    fac = np.exp(-t * eigenvalues(op.params))
    return SpectralOperator(op.params, op.matrix * fac[None, :], op.beta, op.alpha)


def a_increment(t: float, s: float, phi: SpectralField) -> SpectralField:
    """(S_{t-s} - Id) phi, the increment of the homogeneous flow."""
    if t < s:
        raise SpectralError(f"simplex order violated: t={t} < s={s}")
    fac = np.expm1(-(t - s) * eigenvalues(phi.params))
    return SpectralField(phi.params, fac * phi.coeffs, phi.alpha)


# ---------------------------------------------------------------------------
# products and collocation


def convolve_coeffs(a: np.ndarray, b: np.ndarray, nmodes: int) -> np.ndarray:
    """Coefficients of the pointwise product, truncated to modes -N..N."""
    full = np.convolve(a, b)
    return full[nmodes : 3 * nmodes + 1]


def pointwise_product(phi: SpectralField, psi: SpectralField) -> SpectralField:
    if phi.params != psi.params:
        raise SpectralError("fields live on different spectral parameter sets")
    out = convolve_coeffs(phi.coeffs, psi.coeffs, phi.params.nmodes)
    res = SpectralField(phi.params, out, phi.alpha)
    if phi.is_real() and psi.is_real():
        res = res.project_real()
    return res


def collocation_points(params: SpectralParams, factor: int = 2) -> np.ndarray:
    npts = 2 * factor * params.nmodes + 1
    return np.arange(npts) / npts


def to_values(phi: SpectralField, points: np.ndarray | None = None) -> np.ndarray:
    pts = collocation_points(phi.params) if points is None else points
    E = np.exp(2j * np.pi * np.outer(pts, phi.params.modes))
    return E @ phi.coeffs


def from_values(params: SpectralParams, values: np.ndarray) -> SpectralField:
    """Trig-interpolate equispaced values and truncate to modes -N..N."""
    npts = len(values)
    if npts < params.size:
        raise SpectralError("not enough collocation points for the truncation")
    hat = np.fft.fft(values) / npts
    n = params.nmodes
    coeffs = np.concatenate([hat[npts - n :], hat[: n + 1]])
    return SpectralField(params, coeffs)


def apply_pointwise(sigma, phi: SpectralField) -> SpectralField:
    """Composition operator f(phi)(x) = sigma(phi(x)) via collocation.

    Transforms to 4N+1 points, applies sigma there, transforms back and
    truncates; the standard pseudo-spectral treatment.
    """
    pts = collocation_points(phi.params)
    vals = to_values(phi, pts)
    if phi.is_real(tol=1e-9):
        vals = vals.real
    out = sigma(vals)
    res = from_values(phi.params, np.asarray(out, dtype=complex))
    res.alpha = phi.alpha
    return res.project_real() if phi.is_real(tol=1e-9) else res


# ---------------------------------------------------------------------------
# norms


def field_norm(phi: SpectralField, alpha: float = 0.0) -> float:
    """| A_o^alpha phi |_{L^2}, the B_alpha norm."""
    lam = eigenvalues(phi.params)
    return float(np.sqrt(np.sum(lam ** (2 * alpha) * np.abs(phi.coeffs) ** 2)))


def _weighted_matrix(op: SpectralOperator, beta: float, alpha: float) -> np.ndarray:
    lam = eigenvalues(op.params)
    return (lam**alpha)[:, None] * op.matrix * (lam ** (-beta))[None, :]


def operator_norm(op: SpectralOperator, beta: float = 0.0, alpha: float = 0.0) -> float:
    """Operator norm B_beta -> B_alpha (largest singular value in weighted bases)."""
    return float(np.linalg.norm(_weighted_matrix(op, beta, alpha), 2))


def hs_norm(op: SpectralOperator, beta: float = 0.0, alpha: float = 0.0) -> float:
    """Hilbert-Schmidt norm B_beta -> B_alpha."""
    return float(np.linalg.norm(_weighted_matrix(op, beta, alpha), "fro"))


def sobolev_w_norm(phi: SpectralField, kappa: float, npts: int | None = None) -> float:
    """W^{2 kappa, 2} norm via 2-d midpoint quadrature of the double integral.

    Uses an offset grid so the diagonal singularity (integrable for
    kappa < 1/2) is never sampled.
    """
    M = (4 * phi.params.nmodes + 1) if npts is None else npts
    xs = (np.arange(M) + 0.5) / M
    E = np.exp(2j * np.pi * np.outer(xs, phi.params.modes))
    vals = E @ phi.coeffs
    l2sq = float(np.sum(np.abs(phi.coeffs) ** 2))
    diff = np.abs(vals[:, None] - vals[None, :]) ** 2
    dist = np.abs(xs[:, None] - xs[None, :])
    np.fill_diagonal(dist, 1.0)
    weight = dist ** (-(1.0 + 4.0 * kappa))
    np.fill_diagonal(weight, 0.0)
    var = float(np.sum(diff * weight)) / M**2
    return float(np.sqrt(l2sq + var))


def norm(obj, alpha: float = 0.0, beta: float = 0.0, kind: str = "B") -> float:
    """Unified norm dispatch: kind in {"B", "operator", "HS", "sobolev-W"}."""
    if kind == "B":
        return field_norm(obj, alpha)
    if kind == "operator":
        return operator_norm(obj, beta, alpha)
    if kind == "HS":
        return hs_norm(obj, beta, alpha)
    if kind == "sobolev-W":
        return sobolev_w_norm(obj, alpha)
    raise SpectralError(f"unknown norm kind {kind!r}")
