"""Space-time Gaussian drivers on the circle and the driver-increment tables.

The noise field is decomposed over Fourier modes as
x_u = sum_p lam_p^{-nu/2} e_p beta^p_u, with independent scalar Brownian or
fractional-Brownian drivers beta^p per mode, mirrored so the field is real
(beta^{-p} = conj(beta^p)).  Everything downstream consumes the per-cell
increments of the driver field coefficients on a fine dyadic grid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np

from .grids import DyadicGrid
from .spectral import SpectralParams, SpectralError, eigenvalues

_MAX_CHOLESKY_CELLS = 4096


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseParams:
    kind: str  # "brownian" | "fbm"
    nmodes: int
    nu: float = 0.5
    hurst: float | None = None
    seed: int = 0
    fine_level: int = 10
    horizon: float = 1.0

    def __post_init__(self):
        if self.kind not in ("brownian", "fbm"):
            raise NoiseError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.nu < 1.0:
            raise NoiseError(f"nu must lie in [0, 1), got {self.nu}")
        if self.nu == 0.0:
            warnings.warn(
                "nu = 0 is space-time white noise; the scaling analysis "
                "rules this regime out, sampling it anyway",
                stacklevel=2,
            )
        if self.kind == "fbm":
            if self.hurst is None or not 0.5 < self.hurst < 1.0:
                raise NoiseError(
                    f"fbm driver needs Hurst H in (1/2, 1), got {self.hurst}"
                )
        if self.fine_level < 1:
            raise NoiseError("fine_level must be >= 1")

    @property
    def c_hurst(self) -> float:
        if self.hurst is None:
            return 0.0
        return self.hurst * (2 * self.hurst - 1)

    @property
    def spectral(self) -> SpectralParams:
        return SpectralParams(self.nmodes, self.horizon)


def _fgn_autocov(hurst: float, lags: np.ndarray) -> np.ndarray:
    k = np.abs(lags).astype(float)
    return 0.5 * (
        np.abs(k + 1) ** (2 * hurst) + np.abs(k - 1) ** (2 * hurst) - 2 * k ** (2 * hurst)
    )


@lru_cache(maxsize=8)
def _fgn_cholesky(hurst: float, ncells: int) -> np.ndarray:
    """Cholesky factor of the unit-step fractional Gaussian noise covariance."""
    k = np.arange(ncells)
    cov = _fgn_autocov(hurst, k[:, None] - k[None, :])
    return np.linalg.cholesky(cov)


@lru_cache(maxsize=8)
def _fgn_circulant_eigs(hurst: float, ncells: int) -> np.ndarray:
    row = np.concatenate(
        [
            _fgn_autocov(hurst, np.arange(ncells + 1)),
            _fgn_autocov(hurst, np.arange(ncells - 1, 0, -1)),
        ]
    )
    eig = np.fft.fft(row).real
    if np.min(eig) < -1e-9:
        raise NoiseError("circulant embedding produced negative eigenvalues")
    return np.clip(eig, 0.0, None)


def _fgn_circulant(hurst: float, ncells: int, rng: np.random.Generator) -> np.ndarray:
    """Exact-in-law unit-step fGn by circulant embedding (used above the
    Cholesky size cap; identical law, O(n log n))."""
    n = ncells
    eig = _fgn_circulant_eigs(hurst, n)
    w = np.zeros(2 * n, dtype=complex)
    w[0] = np.sqrt(eig[0] / (2 * n)) * rng.standard_normal()
    w[n] = np.sqrt(eig[n] / (2 * n)) * rng.standard_normal()
    a = rng.standard_normal(n - 1)
    b = rng.standard_normal(n - 1)
    w[1:n] = np.sqrt(eig[1:n] / (4 * n)) * (a + 1j * b)
    w[n + 1 :] = np.conj(w[1:n][::-1])
    return np.fft.fft(w).real[:n]


@dataclass
class NoisePath:
    """Per-mode driver increments on the fine dyadic grid.

    ``dbeta[p + N, k]`` is the increment of beta^p over fine cell k.  Rows are
    mirrored (conjugate) so the driver field is real valued; mode 0 is real.
    """

    params: NoiseParams
    dbeta: np.ndarray

    @property
    def ncells(self) -> int:
        return self.dbeta.shape[1]

    @property
    def q_scaling(self) -> np.ndarray:
        return eigenvalues(self.params.spectral) ** (-self.params.nu / 2)

    def field_increments(self) -> np.ndarray:
        """Per-cell coefficient increments of the driver field (modes x cells)."""
        return self.q_scaling[:, None] * self.dbeta


def sample_noise(params: NoiseParams, replica: int = 0) -> NoisePath:
    """Draw one noise realization; deterministic in (params.seed, replica)."""
    ncells = 1 << params.fine_level
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=params.seed, spawn_key=(replica,))
    )
    n = params.nmodes
    dt = params.horizon / ncells
    dbeta = np.zeros((2 * n + 1, ncells), dtype=complex)

    if params.kind == "brownian":
        sd = np.sqrt(dt)
        dbeta[n] = sd * rng.standard_normal(ncells)
        for p in range(1, n + 1):
            re = rng.standard_normal(ncells)
            im = rng.standard_normal(ncells)
            dbeta[n + p] = sd / np.sqrt(2.0) * (re + 1j * im)
    else:
        scale = dt**params.hurst
        if ncells <= _MAX_CHOLESKY_CELLS:
            chol = _fgn_cholesky(params.hurst, ncells)
            draw = lambda: chol @ rng.standard_normal(ncells)
        else:
            draw = lambda: _fgn_circulant(params.hurst, ncells, rng)
        dbeta[n] = scale * draw()
        for p in range(1, n + 1):
            dbeta[n + p] = scale / np.sqrt(2.0) * (draw() + 1j * draw())

    dbeta[:n] = np.conj(dbeta[n + 1 :][::-1])
    return NoisePath(params, dbeta)


@dataclass
class DriverPath:
    """Driver field increments consumed by lifts and solvers.

    ``cells[:, k]`` are the Fourier coefficients of the increment of the
    driving field over fine cell k.  Immutable once built; aggregation to a
    coarser level sums cells exactly.
    """

    spectral: SpectralParams
    fine_level: int
    cells: np.ndarray  # (2N+1, 2**fine_level) complex
    kind: str = "noise"
    xdot: Callable[[float], np.ndarray] | None = None  # smooth drivers only
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        m = self.spectral.size
        if self.cells.shape != (m, 1 << self.fine_level):
            raise NoiseError(
                f"cells shape {self.cells.shape} does not match "
                f"({m}, {1 << self.fine_level})"
            )

    @property
    def horizon(self) -> float:
        return self.spectral.horizon

    @property
    def ncells(self) -> int:
        return 1 << self.fine_level

    @property
    def dt(self) -> float:
        return self.horizon / self.ncells

    def grid(self) -> DyadicGrid:
        return DyadicGrid(self.horizon, self.fine_level)

    def aggregate(self, to_level: int) -> "DriverPath":
        """Exactly coarsen the cell increments to a lower fine level."""
        if to_level > self.fine_level:
            raise NoiseError("cannot refine a sampled driver")
        if to_level == self.fine_level:
            return self
        k = 1 << (self.fine_level - to_level)
        m, K = self.cells.shape
        agg = self.cells.reshape(m, K // k, k).sum(axis=2)
        return replace(self, fine_level=to_level, cells=agg)

    @classmethod
    def from_noise(cls, path: NoisePath) -> "DriverPath":
        return cls(
            spectral=path.params.spectral,
            fine_level=path.params.fine_level,
            cells=path.field_increments(),
            kind=path.params.kind,
            meta={"seed": path.params.seed, "nu": path.params.nu, "hurst": path.params.hurst},
        )

    @classmethod
    def deterministic_time(cls, sp: SpectralParams, fine_level: int) -> "DriverPath":
        """x_t = t * Id (multiplication by the constant field t); unit-test mode."""
        K = 1 << fine_level
        cells = np.zeros((sp.size, K), dtype=complex)
        cells[sp.nmodes, :] = sp.horizon / K
        e0 = np.zeros(sp.size, dtype=complex)
        e0[sp.nmodes] = 1.0
        return cls(sp, fine_level, cells, kind="deterministic", xdot=lambda t: e0)

    @classmethod
    def from_smooth(
        cls,
        sp: SpectralParams,
        fine_level: int,
        coeff_path: Callable[[float], np.ndarray],
        coeff_dot: Callable[[float], np.ndarray] | None = None,
    ) -> "DriverPath":
        """Driver from a smooth in time, band-limited in space field path."""
        K = 1 << fine_level
        ts = np.arange(K + 1) * (sp.horizon / K)
        vals = np.stack([np.asarray(coeff_path(t), dtype=complex) for t in ts], axis=1)
        cells = vals[:, 1:] - vals[:, :-1]
        return cls(sp, fine_level, cells, kind="smooth", xdot=coeff_dot)


def sample_driver(params: NoiseParams, replica: int = 0) -> DriverPath:
    return DriverPath.from_noise(sample_noise(params, replica))


def build_x1(driver: DriverPath, keep_level: int, eta: float = 0.3, kappa: float = 0.3):
    """First-level lift X^1 as an operator-valued 2-increment table.

    Fine adjacent values are left-point Wiener sums of the driver against the
    semigroup; coarser pairs follow from the Chen recursion
    X^1_{ts} = X^1_{tu} S_{us} + S_{tu} X^1_{us}, so tilde-delta X^1 = 0 holds
    exactly on the stored grid.
    """
    from .lift import build_lift

    lift = build_lift(driver, keep_level=keep_level, n_orders=1, eta=eta, kappa=kappa)
    return lift
