"""Fixed-point solvers for the mild evolution problems: the Young equation
with a composition nonlinearity, the linear equation driven by a step-3 lift,
and the quadratic equation driven by tree operators; plus the classical
exponential-Euler reference integrator used as the smooth-noise oracle.

All solvers advance on a dyadic solution grid.  The integral of a Picard
iterate is a left-point corrected sum: each coarse cell contributes its lift
operator applied to the frozen iterate at the cell's left end, so sub-cell
noise detail enters through the operators while the iterate lives on the
solution grid.  Windows are halved until a contraction certificate holds.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grids import DyadicGrid
from .lift import LEAF, VEE, RoughLift, Tree, TreeOperator, TwoLeg, _mode_conv
from .noise import DriverPath
from .spectral import (
    SpectralField,
    SpectralParams,
    collocation_points,
    eigenvalues,
    field_norm,
)

SIGMAS = {
    "zero": lambda v: np.zeros_like(v),
    "const": lambda v: np.ones_like(v),
    "tanh": np.tanh,
    "sin": np.sin,
    "identity": lambda v: v,
    "square": lambda v: v**2,
}


class SolverError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class MildPath:
    grid: DyadicGrid
    params: SpectralParams
    coeffs: np.ndarray  # (npoints, m)

    def field(self, i: int) -> SpectralField:
        return SpectralField(self.params, self.coeffs[i])

    def sup_norm(self, alpha: float = 0.0) -> float:
        lam = eigenvalues(self.params)
        return float(np.max(np.sqrt(np.sum(lam ** (2 * alpha) * np.abs(self.coeffs) ** 2, axis=1))))

    def star_norm(self, kappa: float, alpha: float) -> float:
        """sup-norm in B_alpha plus the kappa-Hoelder norm of the hat increments."""
        lam = eigenvalues(self.params)
        sup = self.sup_norm(alpha)
        dt = self.grid.horizon / self.grid.ncells
        best = 0.0
        for n in range(self.grid.level + 1):
            k = self.grid.stride(n)
            dec = np.exp(-(k * dt) * lam)
            diff = self.coeffs[k::k][: 1 << n] - dec * self.coeffs[: -k : k][: 1 << n]
            mags = np.sqrt(np.sum(lam ** (2 * alpha) * np.abs(diff) ** 2, axis=1))
            best = max(best, float(np.max(mags)) / (k * dt) ** kappa)
        return sup + best


@dataclass
class WindowReport:
    start: float
    end: float
    iterations: int
    contraction: float
    residual: float
    ball_radius: float
    ball_ok: bool


@dataclass
class SolveResult:
    path: MildPath
    windows: list
    halvings: int
    converged: bool
    meta: dict = field(default_factory=dict)

    @property
    def diagnostics(self) -> dict:
        return {
            "halvings": self.halvings,
            "converged": self.converged,
            "windows": [
                {
                    "start": w.start,
                    "end": w.end,
                    "iterations": w.iterations,
                    "contraction": w.contraction,
                    "residual": w.residual,
                    "ball_radius": w.ball_radius,
                    "ball_ok": w.ball_ok,
                }
                for w in self.windows
            ],
            **self.meta,
        }


# ---------------------------------------------------------------------------
# nonlinearity on collocation values


def make_sigma(sigma) -> Callable[[np.ndarray], np.ndarray]:
    if callable(sigma):
        return sigma
    try:
        return SIGMAS[sigma]
    except KeyError:
        raise SolverError(f"unknown sigma {sigma!r}; choose from {sorted(SIGMAS)}")


def apply_sigma_block(sigma, coeffs: np.ndarray, params: SpectralParams) -> np.ndarray:
    """sigma(y(.)) per grid point, pseudo-spectrally, batched over rows."""
    pts = collocation_points(params)
    E = np.exp(2j * np.pi * np.outer(pts, params.modes))
    vals = coeffs @ E.T  # (K, npts)
    out = sigma(vals.real)
    npts = len(pts)
    hat = np.fft.fft(out, axis=1) / npts
    n = params.nmodes
    return np.concatenate([hat[:, npts - n :], hat[:, : n + 1]], axis=1)


# ---------------------------------------------------------------------------
# Young solver


@dataclass
class YoungProblem:
    driver: DriverPath
    sigma: object
    psi: SpectralField
    kappa: float = 0.3
    add_identity_drift: bool = False  # solve with A = Laplacian by absorbing +y dt


def check_young_hypotheses(kappa: float, gamma_t: float, kappa0: float) -> list[str]:
    """Advisory exponent checks for the Young regime; returns warnings."""
    notes = []
    if not 0.25 < kappa < 0.5:
        notes.append(f"kappa = {kappa} outside (1/4, 1/2)")
    if gamma_t + kappa <= 1:
        notes.append(f"gamma + kappa = {gamma_t + kappa:.3f} <= 1: Young products undefined")
    if gamma_t - kappa < kappa0:
        notes.append("gamma - kappa < kappa0: regularity gain too small")
    return notes


def solve_young(
    problem: YoungProblem,
    tol: float = 1e-8,
    max_iter: int = 50,
    max_halvings: int = 12,
    solve_level: int | None = None,
) -> SolveResult:
    """Picard iteration for dy = A y dt + dx sigma(y), windowed until the
    map contracts; windows are continued across the whole horizon."""
    driver = problem.driver
    level = driver.fine_level if solve_level is None else solve_level
    driver = driver.aggregate(level)
    sigma = make_sigma(problem.sigma)
    sp = driver.spectral
    lam = eigenvalues(sp)
    grid = DyadicGrid(driver.horizon, level)
    K = grid.ncells
    dt = grid.step()
    dec = np.exp(-dt * lam)
    drift_w = -np.expm1(-dt * lam) / lam if problem.add_identity_drift else None

    def sweep(y: np.ndarray, lo: int, hi: int, psi_w: np.ndarray) -> np.ndarray:
        """One Picard application of Gamma on window cells [lo, hi)."""
        f = apply_sigma_block(sigma, y[lo:hi], sp)
        src = _mode_conv(driver.cells[:, lo:hi], f.T, sp.nmodes)
        z = np.empty((hi - lo + 1, sp.size), dtype=complex)
        z[0] = psi_w
        cur = psi_w
        for k in range(hi - lo):
            cur = dec * (cur + src[:, k])
            if drift_w is not None:
                # exact per-cell integral of S against the frozen iterate
                cur = cur + drift_w * y[lo + k]
            z[k + 1] = cur
        return z

    for halving in range(max_halvings + 1):
        nwin = min(1 << halving, K)
        wlen = K // nwin
        coeffs = np.zeros((grid.npoints, sp.size), dtype=complex)
        coeffs[0] = problem.psi.coeffs
        windows, ok = [], True
        for wi in range(nwin):
            lo, hi = wi * wlen, (wi + 1) * wlen
            psi_w = coeffs[lo]
            # homogeneous start
            taus = np.arange(wlen + 1) * dt
            y = np.exp(-np.outer(taus, lam)) * psi_w
            prev_r, contraction, niter = None, 0.0, 0
            for it in range(max_iter):
                z = sweep(y, lo, hi, psi_w)
                r = float(np.max(np.abs(z - y)))
                scale = max(float(np.max(np.abs(z))), 1e-30)
                if prev_r is not None and prev_r > 0:
                    contraction = max(contraction, r / prev_r)
                prev_r = r
                y = z
                niter = it + 1
                if r < tol * scale:
                    break
            else:
                ok = False
            if niter > 2 and contraction >= 0.5:
                ok = False
            ball = 2.0 * (1.0 + field_norm(SpectralField(sp, psi_w), problem.kappa))
            wnorm = float(
                np.max(np.sqrt(np.sum(lam ** (2 * problem.kappa) * np.abs(y) ** 2, axis=1)))
            )
            windows.append(
                WindowReport(lo * dt, hi * dt, niter, contraction, prev_r, ball, wnorm <= ball)
            )
            coeffs[lo : hi + 1] = y
            if not ok:
                break
        if ok:
            return SolveResult(MildPath(grid, sp, coeffs), windows, halving, True)
    raise SolverError(
        f"no contraction after {max_halvings} window halvings", diagnostics=windows
    )


# ---------------------------------------------------------------------------
# classical reference integrator (smooth drivers)


def etd_reference(
    sp: SpectralParams,
    xdot: Callable[[float], np.ndarray],
    sigma,
    psi: SpectralField,
    level: int,
    horizon: float | None = None,
    add_identity_drift: bool = False,
) -> MildPath:
    """Exponential-Euler integrator for dy = A y dt + xdot(t) sigma(y) dt.

    Independent of the sewing machinery: per-mode phi1 weights and a plain
    time loop.  Only meaningful for drivers with a genuine time derivative.
    """
    sigma = make_sigma(sigma)
    T = sp.horizon if horizon is None else horizon
    grid = DyadicGrid(T, level)
    lam = eigenvalues(sp)
    dt = grid.step()
    dec = np.exp(-dt * lam)
    phi1 = -np.expm1(-dt * lam) / (lam * dt)
    coeffs = np.zeros((grid.npoints, sp.size), dtype=complex)
    coeffs[0] = psi.coeffs
    pts = collocation_points(sp)
    E = np.exp(2j * np.pi * np.outer(pts, sp.modes))
    npts = len(pts)
    n = sp.nmodes
    y = psi.coeffs.copy()
    for k in range(grid.ncells):
        t = k * dt
        yvals = (E @ y).real
        xvals = (E @ xdot(t)).real
        nl = xvals * sigma(yvals)
        hat = np.fft.fft(nl) / npts
        nl_hat = np.concatenate([hat[npts - n :], hat[: n + 1]])
        if add_identity_drift:
            nl_hat = nl_hat + y
        y = dec * y + dt * phi1 * nl_hat
        coeffs[k + 1] = y
    return MildPath(grid, sp, coeffs)


# ---------------------------------------------------------------------------
# linear rough solver


@dataclass
class ControlledPathLinear:
    """Controlled-path data for the linear problem: (y, y1, y2) plus the
    implied remainders; all stored as coefficient blocks per grid point."""

    y: np.ndarray
    y1: np.ndarray
    y2: np.ndarray


def rough_integral_linear(
    lift: RoughLift, y: np.ndarray, y1: np.ndarray, y2: np.ndarray, lo: int, hi: int
) -> np.ndarray:
    """Corrected-sum convolution integral J_{t, lo} of a controlled path over
    the cells of [lo, hi]: sum of S-weights of X^1 y + X^2 y^1 + X^3 y^2."""
    sp = lift.params
    lam = eigenvalues(sp)
    dt = lift.grid.horizon / lift.grid.ncells
    dec = np.exp(-dt * lam)
    tab = [lift.adjacent(k, lift.grid.level) for k in range(1, lift.orders + 1)]
    comps = [y, y1, y2][: lift.orders]
    out = np.zeros((hi - lo + 1, sp.size), dtype=complex)
    cur = np.zeros(sp.size, dtype=complex)
    for k in range(lo, hi):
        germ = np.zeros(sp.size, dtype=complex)
        for x_ord, comp in zip(tab, comps):
            germ = germ + x_ord[k] @ comp[k - lo]
        cur = dec * cur + germ
        # the germ carries its own S-weight to the cell's right end already;
        # the scan then transports it to t with the semigroup
        out[k - lo + 1] = cur
    return out


def corrected_riemann_linear(
    lift: RoughLift, y: np.ndarray, y1: np.ndarray, y2: np.ndarray, at_level: int
) -> np.ndarray:
    """Level-wise corrected Riemann sum of the rough convolution integral over
    [0, T], for convergence-rate studies: coarser germ cells, same path."""
    sp = lift.params
    lam = eigenvalues(sp)
    grid = lift.grid
    stride = grid.stride(at_level)
    dt = grid.horizon / grid.ncells
    dec = np.exp(-(stride * dt) * lam)
    cur = np.zeros(sp.size, dtype=complex)
    for k in range(0, grid.ncells, stride):
        germ = np.zeros(sp.size, dtype=complex)
        comps = [y, y1, y2][: lift.orders]
        for order, comp in zip(range(1, lift.orders + 1), comps):
            germ = germ + lift.value(order, k + stride, k) @ comp[k]
        cur = dec * cur + germ
    return cur


def solve_rough_linear(
    lift: RoughLift,
    psi: SpectralField,
    tol: float = 1e-8,
    max_iter: int = 50,
    max_halvings: int = 12,
) -> SolveResult:
    """Fixed point of the controlled-path map for dy = A y dt + dx y."""
    sp = lift.params
    lam = eigenvalues(sp)
    grid = lift.grid
    K = grid.ncells
    dt = grid.step()

    for halving in range(max_halvings + 1):
        nwin = min(1 << halving, K)
        wlen = K // nwin
        coeffs = np.zeros((grid.npoints, sp.size), dtype=complex)
        coeffs[0] = psi.coeffs
        windows, ok = [], True
        for wi in range(nwin):
            lo, hi = wi * wlen, (wi + 1) * wlen
            psi_w = coeffs[lo]
            taus = np.arange(wlen + 1) * dt
            hom = np.exp(-np.outer(taus, lam)) * psi_w
            y = hom.copy()
            prev_r, contraction, niter = None, 0.0, 0
            for it in range(max_iter):
                J = rough_integral_linear(lift, y, y, y, lo, hi)
                z = hom + J
                r = float(np.max(np.abs(z - y)))
                scale = max(float(np.max(np.abs(z))), 1e-30)
                if prev_r is not None and prev_r > 0:
                    contraction = max(contraction, r / prev_r)
                prev_r = r
                y = z
                niter = it + 1
                if r < tol * scale:
                    break
            else:
                ok = False
            if niter > 2 and contraction >= 0.5:
                ok = False
            norm_w = float(np.max(np.abs(y)))
            windows.append(
                WindowReport(lo * dt, hi * dt, niter, contraction, prev_r, np.inf, True)
            )
            coeffs[lo : hi + 1] = y
            if not ok:
                break
        if ok:
            led = lift.ledger
            if led["hyp3_sum"] <= 1:
                warnings.warn(
                    f"gamma + 3 kappa0 = {led['hyp3_sum']:.3f} <= 1: outside the "
                    "step-3 regime (advisory)",
                    stacklevel=2,
                )
            return SolveResult(MildPath(grid, sp, coeffs), windows, halving, True)
    raise SolverError(f"no contraction after {max_halvings} halvings")


def linear_flow(lift: RoughLift, t: int, s: int, **kw) -> np.ndarray:
    """Flow operator Phi_{ts} column by column from basis initial data."""
    sp = lift.params
    if sp.nmodes > 16:
        raise SolverError("basis flow extraction is limited to N <= 16; use the series")
    m = sp.size
    out = np.zeros((m, m), dtype=complex)
    sub = _restrict_lift(lift, s, t)
    for j in range(m):
        e = np.zeros(m, dtype=complex)
        e[j] = 1.0
        res = solve_rough_linear(sub, SpectralField(sp, e), **kw)
        out[:, j] = res.path.coeffs[-1]
    return out


def _restrict_lift(lift: RoughLift, s: int, t: int) -> RoughLift:
    """View of a lift on the sub-interval [s, t] (dyadic block aligned)."""
    gap = t - s
    if gap & (gap - 1) or s % gap:
        raise SolverError("flow restriction needs an aligned dyadic block")
    nlev = int(np.log2(gap))
    dt = lift.grid.horizon / lift.grid.ncells
    levels = {}
    for n in range(nlev + 1):
        stride_sub = gap // (1 << n)
        src_level = lift.grid.level - int(np.log2(stride_sub))
        offset = s // stride_sub
        levels[n] = {
            k: lift.levels[src_level][k][offset : offset + (1 << n)]
            for k in lift.levels[src_level]
        }
    grid = DyadicGrid(gap * dt, nlev)
    return RoughLift(lift.driver, grid, lift.orders, levels, lift.eta, lift.kappa)


# ---------------------------------------------------------------------------
# quadratic rough solver


@dataclass
class ControlledPathQuadratic:
    y: np.ndarray
    w: np.ndarray
    w_heart: np.ndarray  # (npoints, m, m) two-leg component
    y_sharp_norm: float = 0.0


_QUAD_GERM: list[tuple[Tree, str]] = [
    (VEE, "yy"),
    (Tree(VEE, LEAF), "wwy"),
    (Tree(LEAF, VEE), "yww"),
    (Tree(VEE, VEE), "wwww"),
    (Tree(Tree(VEE, LEAF), LEAF), "Hwy"),
    (Tree(Tree(LEAF, VEE), LEAF), "wHy"),
    (Tree(LEAF, Tree(VEE, LEAF)), "yHw"),
    (Tree(LEAF, Tree(LEAF, VEE)), "ywH"),
]


def solve_rough_quadratic(
    driver: DriverPath,
    psi: SpectralField,
    horizon: float | None = None,
    solve_level: int = 6,
    tol: float = 1e-8,
    max_iter: int = 50,
    max_halvings: int = 12,
) -> SolveResult:
    """Local solution of dy = A y dt + dx B(y (x) y) via tree-operator sums.

    The Picard germ carries all controlled-path terms with up to four leaves:
    the pure square, the third-order terms fed by w (x) w, and the
    fourth-order terms fed by the two-leg component w_heart.  The horizon is
    halved until the map contracts; if it underflows, the best local interval
    is reported instead of a silent blow-up.
    """
    sp = driver.spectral
    lam = eigenvalues(sp)
    T_req = driver.horizon if horizon is None else horizon
    ops = {tree.label(): TreeOperator(tree, driver, cache_paths=False) for tree, _ in dict(_QUAD_GERM).items()}

    frac = 1.0
    for halving in range(max_halvings + 1):
        T0 = T_req * frac
        ncells_f = int(round(T0 / driver.dt))
        if ncells_f < 4:
            raise SolverError("window underflow: local existence interval exhausted (blow-up indicator)")
        level = min(solve_level, int(np.log2(ncells_f)))
        K = 1 << level
        stride = ncells_f // K
        dt = stride * driver.dt
        grid = DyadicGrid(K * dt, level)
        dec = np.exp(-dt * lam)
        taus = np.arange(K + 1) * dt
        hom = np.exp(-np.outer(taus, lam)) * psi.coeffs
        y = hom.copy()
        w = y.copy()
        wh = np.einsum("ki,kj->kij", w, w)
        prev_r, contraction, niter = None, 0.0, 0
        converged = False
        for it in range(max_iter):
            z = hom.copy()
            cur = np.zeros(sp.size, dtype=complex)
            for k in range(K):
                fl, fr = k * stride, (k + 1) * stride
                yk, wk, whk = y[k], w[k], TwoLeg(wh[k])
                germ = np.zeros(sp.size, dtype=complex)
                for tree, kind in _QUAD_GERM:
                    op = ops[tree.label()]
                    if kind == "yy":
                        args = [yk, yk]
                    elif kind == "wwy":
                        args = [wk, wk, yk]
                    elif kind == "yww":
                        args = [yk, wk, wk]
                    elif kind == "wwww":
                        args = [wk, wk, wk, wk]
                    elif kind == "Hwy":
                        args = [whk, wk, yk]
                    elif kind == "wHy":
                        args = [wk, whk, yk]
                    elif kind == "yHw":
                        args = [yk, whk, wk]
                    else:  # ywH
                        args = [yk, wk, whk]
                    germ = germ + op.apply(fr, fl, args)
                cur = dec * cur + germ
                z[k + 1] = z[k + 1] + cur
            r = float(np.max(np.abs(z - y)))
            scale = max(float(np.max(np.abs(z))), 1e-30)
            if prev_r is not None and prev_r > 0:
                contraction = max(contraction, r / prev_r)
            prev_r = r
            # controlled update: w follows the previous iterate, w_heart = w (x) w
            w = y.copy()
            wh = np.einsum("ki,kj->kij", w, w)
            y = z
            niter = it + 1
            if r < tol * scale:
                converged = True
                break
        if converged and (niter <= 2 or contraction < 0.5):
            win = WindowReport(0.0, K * dt, niter, contraction, prev_r, np.inf, True)
            return SolveResult(
                MildPath(grid, sp, y),
                [win],
                halving,
                True,
                meta={"t_final": K * dt, "requested": T_req, "local_only": frac < 1.0},
            )
        frac *= 0.5
    raise SolverError("window underflow: no contraction on any dyadic fraction of the horizon")
