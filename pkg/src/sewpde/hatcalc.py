"""Convolutional increment calculus: the semigroup-perturbed coboundaries
hat-delta = delta - a and tilde-delta = hat-delta - (.)a, their Hoelder
scales, the convolutional sewing map, and weighted Riemann limits.

Values of hat increments are raw coefficient arrays (fields) or mode matrices
(operators); the semigroup acts diagonally per mode, which is what makes the
sewing construction exact on the grid: the subtracted Riemann part is a
hat-exact increment, so applying hat-delta to the sewn output returns the
input up to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grids import DyadicGrid, check_simplex
from .increments import ClosednessError, RegularityError
from .spectral import SpectralParams, eigenvalues


class DivergenceError(RuntimeError):
    def __init__(self, message, levels, values):
        super().__init__(message)
        self.levels = levels
        self.values = values


# ---------------------------------------------------------------------------
# containers


@dataclass
class HatPath:
    """A path of fields: one coefficient vector per grid point."""

    grid: DyadicGrid
    params: SpectralParams
    coeffs: np.ndarray  # (npoints, m)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (self.grid.npoints, self.params.size):
            raise ValueError(f"coeff array shape {c.shape} does not match grid/params")
        self.coeffs = c

    @classmethod
    def from_function(cls, grid, params, f: Callable[[float], np.ndarray]):
        return cls(grid, params, np.stack([np.asarray(f(t), dtype=complex) for t in grid.points]))

    def value(self, i: int) -> np.ndarray:
        return self.coeffs[i]


@dataclass
class HatTable2:
    grid: DyadicGrid
    params: SpectralParams
    kind: str  # "field" | "op"
    fn: Callable[[int, int], np.ndarray] | None = None
    table: dict = field(default_factory=dict)

    def _zero(self):
        m = self.params.size
        return np.zeros(m, dtype=complex) if self.kind == "field" else np.zeros((m, m), dtype=complex)

    def value(self, t: int, s: int) -> np.ndarray:
        check_simplex(t, s)
        if (t, s) in self.table:
            return self.table[(t, s)]
        if t == s:
            return self._zero()
        if self.fn is None:
            raise KeyError(f"pair {(t, s)} not stored and no closure available")
        return np.asarray(self.fn(t, s), dtype=complex)

    def materialize(self, pairs=None) -> "HatTable2":
        pairs = self.grid.pair_family() if pairs is None else pairs
        for t, s in pairs:
            self.table[(t, s)] = self.value(t, s)
        return self


@dataclass
class HatTable3:
    grid: DyadicGrid
    params: SpectralParams
    kind: str
    fn: Callable[[int, int, int], np.ndarray] | None = None

    def _zero(self):
        m = self.params.size
        return np.zeros(m, dtype=complex) if self.kind == "field" else np.zeros((m, m), dtype=complex)

    def value(self, t: int, u: int, s: int) -> np.ndarray:
        check_simplex(t, u, s)
        if t == u or u == s:
            return self._zero()
        return np.asarray(self.fn(t, u, s), dtype=complex)


# ---------------------------------------------------------------------------
# semigroup action on raw values


def _decay(params: SpectralParams, tau: float) -> np.ndarray:
    return np.exp(-tau * eigenvalues(params))


def apply_semigroup(params: SpectralParams, tau: float, val: np.ndarray) -> np.ndarray:
    """S_tau acting on a raw field vector (or the rows of an operator matrix)."""
    d = _decay(params, tau)
    if val.ndim == 1:
        return d * val
    return d[:, None] * val


def apply_semigroup_right(params: SpectralParams, tau: float, mat: np.ndarray) -> np.ndarray:
    """Operator composed with S_tau on the source side (columns scaled)."""
    return mat * _decay(params, tau)[None, :]


# ---------------------------------------------------------------------------
# perturbed coboundaries


def hat_delta(obj):
    """delta - a: kills mild-convolution increments instead of plain ones."""
    if isinstance(obj, HatPath):
        g, p = obj.grid, obj.params
        dt = g.horizon / g.ncells

        def fn(t, s):
            return obj.coeffs[t] - apply_semigroup(p, (t - s) * dt, obj.coeffs[s])

        return HatTable2(g, p, "field", fn=fn)
    if isinstance(obj, HatTable2):
        g, p = obj.grid, obj.params
        dt = g.horizon / g.ncells

        def fn3(t, u, s):
            return obj.value(t, s) - obj.value(t, u) - apply_semigroup(p, (t - u) * dt, obj.value(u, s))

        return HatTable3(g, p, obj.kind, fn=fn3)
    raise TypeError(f"hat_delta not defined for {type(obj)!r}")


def tilde_delta(q: HatTable2) -> HatTable3:
    """delta - a(.) - (.)a on operator-valued 2-increments."""
    if q.kind != "op":
        raise TypeError("tilde_delta acts on operator-valued increments")
    g, p = q.grid, q.params
    dt = g.horizon / g.ncells

    def fn3(t, u, s):
        return (
            q.value(t, s)
            - apply_semigroup_right(p, (u - s) * dt, q.value(t, u))
            - apply_semigroup(p, (t - u) * dt, q.value(u, s))
        )

    return HatTable3(g, p, "op", fn=fn3)


def hat_delta_residual(h: HatTable3, quads) -> float:
    """Max |hat_delta h| over 4-tuples (closedness residual of a 3-increment)."""
    p = h.params
    dt = h.grid.horizon / h.grid.ncells
    worst = 0.0
    for t, u, v, s in quads:
        r = (
            h.value(t, v, s)
            - h.value(t, u, s)
            + h.value(t, u, v)
            - apply_semigroup(p, (t - u) * dt, h.value(u, v, s))
        )
        worst = max(worst, float(np.max(np.abs(r))))
    return worst


def tilde_delta_residual(h: HatTable3, quads) -> float:
    """Closedness residual of an operator 3-increment under tilde-delta.

    The condition h_tvs - h_tus + h_tuv S_vs - S_tu h_uvs = 0 on 4-tuples is
    exactly what makes the both-sided coarsening
    val_ts = val_tu S_us + S_tu val_us + h_tus split-independent; it holds for
    h = sum X^a X^b whenever the lower orders satisfy their Chen relations.
    """
    p = h.params
    dt = h.grid.horizon / h.grid.ncells
    worst = 0.0
    for t, u, v, s in quads:
        r = (
            h.value(t, v, s)
            - h.value(t, u, s)
            + apply_semigroup_right(p, (v - s) * dt, h.value(t, u, v))
            - apply_semigroup(p, (t - u) * dt, h.value(u, v, s))
        )
        worst = max(worst, float(np.max(np.abs(r))))
    return worst


# ---------------------------------------------------------------------------
# Hoelder scales


def value_norm(val: np.ndarray, params: SpectralParams, alpha=0.0, beta=0.0, metric="op") -> float:
    lam = eigenvalues(params)
    if val.ndim == 1:
        return float(np.sqrt(np.sum(lam ** (2 * alpha) * np.abs(val) ** 2)))
    w = (lam**alpha)[:, None] * val * (lam ** (-beta))[None, :]
    if metric == "HS":
        return float(np.linalg.norm(w, "fro"))
    return float(np.linalg.norm(w, 2))


def hat_holder2(g: HatTable2, mu, alpha=0.0, beta=0.0, metric="op", pairs=None) -> float:
    """sup_pairs |g_ts| / (t-s)^mu in the requested space norm."""
    pairs = g.grid.pair_family() if pairs is None else pairs
    dt = g.grid.horizon / g.grid.ncells
    best = 0.0
    for t, s in pairs:
        if t == s:
            continue
        v = value_norm(g.value(t, s), g.params, alpha, beta, metric)
        best = max(best, v / ((t - s) * dt) ** mu)
    return best


_LATTICE = tuple(k / 8 for k in range(1, 8))


def hat_holder3(h: HatTable3, mu, alpha=0.0, beta=0.0, metric="op", triples=None) -> float:
    """Two-parameter norm, minimized over the gamma + rho = mu lattice."""
    triples = h.grid.midpoint_triples() if triples is None else triples
    dt = h.grid.horizon / h.grid.ncells
    mags = np.array([value_norm(h.value(*tr), h.params, alpha, beta, metric) for tr in triples])
    g1 = np.array([(t - u) * dt for t, u, s in triples])
    g2 = np.array([(u - s) * dt for t, u, s in triples])
    best = np.inf
    for frac in _LATTICE:
        gamma = frac * mu
        best = min(best, float(np.max(mags / (g1**gamma * g2 ** (mu - gamma)))))
    return best


# ---------------------------------------------------------------------------
# the convolutional sewing map


@dataclass
class SewingReport:
    mu: float
    alpha: float
    input_norm: float
    ladder: list  # (eps, mu - eps, alpha + eps, norm)
    closedness_residual: float
    inverse_residual: float
    fine_level: int
    richardson_levels: list
    richardson_diffs: list

    def to_json(self) -> dict:
        return {
            "mu": self.mu,
            "alpha": self.alpha,
            "input_norm": self.input_norm,
            "ladder": [
                {"eps": e, "mu": m, "alpha": a, "norm": v} for (e, m, a, v) in self.ladder
            ],
            "closedness_residual": self.closedness_residual,
            "inverse_residual": self.inverse_residual,
            "fine_level": self.fine_level,
            "richardson_levels": self.richardson_levels,
            "richardson_diffs": self.richardson_diffs,
        }


def _check_hat_closed(h: HatTable3, tol: float) -> float:
    rng = np.random.default_rng(1)
    quads = h.grid.random_quads(30, rng)
    res = hat_delta_residual(h, quads)
    scale = max(
        (float(np.max(np.abs(h.value(*tr)))) for tr in h.grid.midpoint_triples()),
        default=0.0,
    )
    if res > tol * max(scale, 1e-30):
        raise ClosednessError(res, scale)
    return res


def hat_sew(
    h: HatTable3,
    mu: float,
    alpha: float = 0.0,
    beta: float = 0.0,
    eps_ladder=(0.0, 0.1, 0.25),
    rtol: float = 1e-9,
    closedness_tol: float = 1e-8,
    check_closed: bool = True,
) -> tuple[HatTable2, SewingReport]:
    """Convolutional sewing map with a gain/residual report.

    Construction: primitive B_ts = -h_{ts0}, minus the semigroup-weighted
    Riemann limit of B.  The weighted part is accumulated by a single mild
    prefix scan R over the finest cells (R_{k+1} = S_dt R_k + B cell), so it
    is a hat-exact increment and hat_delta of the result reproduces h exactly
    on grid triples.
    """
    if mu <= 1:
        raise RegularityError(f"convolutional sewing requires mu > 1, got {mu}")
    closed_res = _check_hat_closed(h, closedness_tol) if check_closed else 0.0

    g, p = h.grid, h.params
    dt = g.horizon / g.ncells

    def B(t, s):
        if t == s or s == 0:
            return h._zero()
        return -h.value(t, s, 0)

    # Richardson history on the probe pair (T, 0)
    probe = g.npoints - 1
    levels, diffs = [], []
    prev = None
    for n in range(min(4, g.level), g.level + 1):
        stride = g.stride(n)
        acc = h._zero()
        for a in range(0, probe, stride):
            acc = apply_semigroup(p, stride * dt, acc) + B(a + stride, a)
        v = B(probe, 0) - acc
        levels.append(n)
        if prev is not None:
            d = float(np.max(np.abs(v - prev)))
            diffs.append(d)
            if d < rtol * max(float(np.max(np.abs(v))), 1.0):
                break
        prev = v

    # mild prefix at full resolution
    R = [h._zero()]
    for a in range(g.ncells):
        R.append(apply_semigroup(p, dt, R[-1]) + B(a + 1, a))
    R = np.stack(R)

    def lam(t, s):
        return B(t, s) - (R[t] - apply_semigroup(p, (t - s) * dt, R[s]))

    out = HatTable2(g, p, h.kind, fn=lam)

    # report: input norm, regularity-trade ladder, inverse residual
    input_norm = hat_holder3(h, mu, alpha=alpha, beta=beta)
    ladder = []
    for eps in eps_ladder:
        if eps >= min(mu, 1.0):
            continue
        ladder.append(
            (eps, mu - eps, alpha + eps, hat_holder2(out, mu - eps, alpha=alpha + eps, beta=beta))
        )
    dlam = hat_delta(out)
    rng = np.random.default_rng(2)
    triples = g.midpoint_triples()[:64] + g.random_triples(16, rng)
    inv_res = 0.0
    for tr in triples:
        inv_res = max(inv_res, float(np.max(np.abs(dlam.value(*tr) - h.value(*tr)))))
    report = SewingReport(
        mu, alpha, input_norm, ladder, closed_res, inv_res, g.level, levels, diffs
    )
    return out, report


def chen_sew(h: HatTable3, variant: str = "hat") -> HatTable2:
    """Alternative sewing route: coarsen from zero with split corrections.

    Builds values from a vanishing finest level via
    val_ts = val_tu + S_tu val_us + h_tus            (variant "hat"), or
    val_ts = val_tu S_us + S_tu val_us + h_tus       (variant "tilde").
    Split independence is exactly the corresponding closedness of h, and the
    result agrees with the primitive-based sewing by uniqueness.  The tilde
    variant is the one higher-order lift extension relies on, where no
    constructive primitive is available.
    """
    g, p = h.grid, h.params
    dt = g.horizon / g.ncells
    memo: dict[tuple[int, int], np.ndarray] = {}
    tilde = variant == "tilde"
    if tilde and h.kind != "op":
        raise TypeError("tilde sewing acts on operator-valued increments")

    def val(t, s):
        if t == s:
            return h._zero()
        key = (t, s)
        if key in memo:
            return memo[key]
        if t - s == 1:
            v = h._zero()
        else:
            u = s + (1 << ((t - s - 1).bit_length() - 1))
            left = val(t, u)
            if tilde:
                left = apply_semigroup_right(p, (u - s) * dt, left)
            v = left + apply_semigroup(p, (t - u) * dt, val(u, s)) + h.value(t, u, s)
        memo[key] = v
        return v

    return HatTable2(g, p, h.kind, fn=val)


def weighted_riemann(
    g: HatTable2,
    t: int,
    s: int,
    rtol: float = 1e-9,
    max_level: int = 18,
    min_levels: int = 3,
) -> np.ndarray:
    """Dyadic limit of sum_i S_{t, t_{i+1}} g_{t_{i+1} t_i} with a Richardson stop.

    Raises DivergenceError (carrying the level history) when successive
    refinements keep moving at the finest available level.
    """
    check_simplex(t, s)
    grid, p = g.grid, g.params
    dt = grid.horizon / grid.ncells
    if t == s:
        return g._zero()
    values, levels = [], []
    top = min(max_level, grid.level)
    # coarsest level whose stride divides both endpoints
    n0 = grid.level
    while n0 > 0:
        k = grid.stride(n0 - 1)
        if t % k or s % k or (t - s) // k < 1:
            break
        n0 -= 1
    for n in range(n0, top + 1):
        stride = grid.stride(n)
        if t % stride or s % stride:
            continue
        acc = g._zero()
        for a in range(s, t, stride):
            acc = apply_semigroup(p, stride * dt, acc) + g.value(a + stride, a)
        values.append(acc)
        levels.append(n)
        if len(values) >= 2:
            d = float(np.max(np.abs(values[-1] - values[-2])))
            scale = max(float(np.max(np.abs(values[-1]))), 1.0)
            if d < rtol * scale and len(values) >= min_levels:
                return values[-1]
    if len(values) >= 3:
        d1 = float(np.max(np.abs(values[-1] - values[-2])))
        d2 = float(np.max(np.abs(values[-2] - values[-3])))
        if d1 <= 0.75 * d2 or d1 < 1e-7 * max(float(np.max(np.abs(values[-1]))), 1.0):
            # still contracting when the grid ran out; accept the finest value
            return values[-1]
    raise DivergenceError(
        f"weighted Riemann sums did not settle by level {top}", levels, values
    )
