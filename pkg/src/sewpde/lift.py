"""Rough lifts of the driver: the incremental operators X^1, X^2, X^3, their
higher-order extension and operator series, and the tree-indexed operators
that quadratic nonlinearities require.

Construction principle used throughout: values on fine adjacent cells are
left-point Ito/Wiener sums of the driver, and every coarser value is derived
from finer ones through the Chen recursions
    X^n_{ts} = X^n_{tu} S_{us} + S_{tu} X^n_{us} + sum_{k} X^{n-k}_{tu} X^k_{us}.
Coarsening is therefore exact algebra: all Chen identities hold to machine
precision on the stored grid and the entire discretization error lives at the
finest level.  For orders >= 4 the same recursion run from a vanishing finest
level IS the tilde-sewing of the Chen right-hand side (unique by the sewing
theorem), so no separate primitive construction is needed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.signal import lfilter

from .grids import DyadicGrid, GridError
from .hatcalc import (
    HatTable2,
    apply_semigroup,
    apply_semigroup_right,
)
from .increments import SewingError
from .noise import DriverPath
from .spectral import SpectralParams, eigenvalues


@lru_cache(maxsize=16)
def _band_index(nmodes: int):
    """Index matrix for Toeplitz lookup: dx coefficient at mode i - j."""
    m = 2 * nmodes + 1
    i = np.arange(m)
    diff = i[:, None] - i[None, :]
    mask = np.abs(diff) <= nmodes
    idx = np.clip(diff + nmodes, 0, m - 1)
    return idx, mask


@lru_cache(maxsize=16)
def _band_index3(nmodes: int):
    """Index tensor for dx coefficient at mode i - j - l."""
    m = 2 * nmodes + 1
    off = np.arange(m)
    # offsets k correspond to modes k - N, so the combined mode is
    # (i-N) - (j-N) - (l-N) = i - j - l + N in offset arithmetic
    mode = off[:, None, None] - off[None, :, None] - off[None, None, :] + nmodes
    mask = np.abs(mode) <= nmodes
    idx = np.clip(mode + nmodes, 0, m - 1)
    return idx, mask


# ---------------------------------------------------------------------------
# multiplicative lift X^1 .. X^n


@dataclass
class RoughLift:
    """Tables of X^1..X^n on the dyadic pair family of a coarse grid.

    ``levels[n][k]`` is an array of shape (2**n, m, m): the values of X^k on
    the adjacent pairs of level n, ordered left to right.  The regularity
    ledger carries the exponents (gamma, kappa0, eta, rho) the configuration
    is expected to satisfy.
    """

    driver: DriverPath
    grid: DyadicGrid
    orders: int
    levels: dict
    eta: float
    kappa: float
    fine_arrays: dict | None = None  # optional adjacent arrays at extra levels

    @property
    def params(self) -> SpectralParams:
        return self.driver.spectral

    @property
    def ledger(self) -> dict:
        nu = self.driver.meta.get("nu", 0.5) if self.driver.meta else 0.5
        nubar = min(nu if nu is not None else 0.5, 0.5)
        kappa0 = 0.25 - self.eta + nubar / 2
        rho = 0.25 - nubar / 2
        gamma = kappa0 + self.eta + rho
        return {
            "eta": self.eta,
            "kappa": self.kappa,
            "kappa0": kappa0,
            "rho": rho,
            "gamma": gamma,
            "hyp3_sum": gamma + 3 * kappa0,
        }

    def adjacent(self, order: int, level: int) -> np.ndarray:
        if level in self.levels and order in self.levels[level]:
            return self.levels[level][order]
        if self.fine_arrays and level in self.fine_arrays:
            return self.fine_arrays[level][order]
        raise GridError(f"level {level} not stored in this lift")

    def value(self, order: int, t: int, s: int) -> np.ndarray:
        """X^order at an arbitrary grid pair, assembled by Chen recursion."""
        m = self.params.size
        if t == s:
            return np.zeros((m, m), dtype=complex)
        vals = self._assemble(t, s)
        return vals[order]

    def _assemble(self, t: int, s: int) -> dict:
        gap = t - s
        level = self.grid.level
        g = gap
        while g % 2 == 0:
            g //= 2
            level -= 1
        if g == 1 and t % self.grid.stride(level) == 0:
            i = s // self.grid.stride(level)
            return {k: self.levels[level][k][i] for k in range(1, self.orders + 1)}
        # split at the highest dyadic boundary inside (s, t)
        u = s + (1 << ((gap - 1).bit_length() - 1))
        dt = self.grid.horizon / self.grid.ncells
        left = self._assemble(t, u)
        right = self._assemble(u, s)
        return _chen_merge(self.params, left, right, (t - u) * dt, (u - s) * dt, self.orders)

    def hat_table(self, order: int) -> HatTable2:
        return HatTable2(
            self.grid, self.params, "op", fn=lambda t, s: self.value(order, t, s)
        )

    def chen_residual(self, order: int, relative: bool = True) -> float:
        """Max defect of tilde-delta X^n = sum X^{n-k} X^k on midpoint triples."""
        dt = self.grid.horizon / self.grid.ncells
        worst, scale = 0.0, 0.0
        for t, u, s in self.grid.midpoint_triples():
            xn_ts = self.value(order, t, s)
            lhs = (
                xn_ts
                - apply_semigroup_right(self.params, (u - s) * dt, self.value(order, t, u))
                - apply_semigroup(self.params, (t - u) * dt, self.value(order, u, s))
            )
            rhs = np.zeros_like(lhs)
            for k in range(1, order):
                rhs += self.value(order - k, t, u) @ self.value(k, u, s)
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
            scale = max(scale, float(np.max(np.abs(xn_ts))))
        return worst / max(scale, 1e-30) if relative else worst


def _chen_merge(params, left: dict, right: dict, tau_left, tau_right, orders: int) -> dict:
    out = {}
    for n in range(1, orders + 1):
        v = apply_semigroup_right(params, tau_right, left[n]) + apply_semigroup(
            params, tau_left, right[n]
        )
        for k in range(1, n):
            v = v + left[n - k] @ right[k]
        out[n] = v
    return out


def build_lift(
    driver: DriverPath,
    keep_level: int,
    n_orders: int = 3,
    eta: float = 0.3,
    kappa: float = 0.18,
    extra_levels: tuple = (),
) -> RoughLift:
    """Build X^1..X^n on the dyadic family of a coarse grid from fine cells.

    ``extra_levels`` keeps the adjacent-pair arrays of selected levels finer
    than ``keep_level`` (used by corrected Riemann sums at those levels).
    """
    if keep_level > driver.fine_level:
        raise GridError("keep_level cannot exceed the driver fine level")
    sp = driver.spectral
    m = sp.size
    lam = eigenvalues(sp)
    Lf = driver.fine_level
    dt = driver.dt
    decay = np.exp(-dt * lam)
    idx, mask = _band_index(sp.nmodes)

    levels: dict = {n: {} for n in range(keep_level + 1)}
    fine_arrays: dict = {n: {} for n in extra_levels if keep_level < n <= Lf}
    for n in levels:
        for k in range(1, n_orders + 1):
            levels[n][k] = np.zeros((1 << n, m, m), dtype=complex)
    for n in fine_arrays:
        for k in range(1, n_orders + 1):
            fine_arrays[n][k] = np.zeros((1 << n, m, m), dtype=complex)

    def store(level, pos, vals):
        if level in levels:
            for k, v in vals.items():
                levels[level][k][pos] = v
        elif level in fine_arrays:
            for k, v in vals.items():
                fine_arrays[level][k][pos] = v

    def rec(lo: int, hi: int) -> dict:
        if hi - lo == 1:
            x1 = decay[:, None] * np.where(mask, driver.cells[:, lo][idx], 0.0)
            vals = {1: x1}
            for k in range(2, n_orders + 1):
                vals[k] = np.zeros((m, m), dtype=complex)
        else:
            mid = (lo + hi) // 2
            right = rec(mid, hi)  # pair (hi, mid)
            left = rec(lo, mid)  # pair (mid, lo)
            tau = (hi - mid) * dt
            vals = _chen_merge(sp, right, left, tau, tau, n_orders)
        level = Lf - (hi - lo).bit_length() + 1
        if level <= keep_level or level in fine_arrays:
            store(level, lo // (hi - lo), vals)
        return vals

    rec(0, driver.ncells)
    grid = DyadicGrid(driver.horizon, keep_level)
    return RoughLift(driver, grid, n_orders, levels, eta, kappa, fine_arrays or None)


# ---------------------------------------------------------------------------
# operator series (the Ito map of the linear problem)


@dataclass
class ItoMapSeries:
    lift: RoughLift
    n_max: int

    def order_norms(self, kappa0: float | None = None, eta: float | None = None) -> dict:
        """sup-norm ledger: ||X^n|| in the (n kappa0)-Hoelder scale on B_eta."""
        led = self.lift.ledger
        kappa0 = led["kappa0"] if kappa0 is None else kappa0
        eta = led["eta"] if eta is None else eta
        from .hatcalc import hat_holder2

        out = {}
        for n in range(1, self.n_max + 1):
            out[n] = hat_holder2(
                self.lift.hat_table(n), mu=n * kappa0, alpha=eta, beta=eta, metric="op"
            )
        return out

    def partial_sum(self, m_terms: int, t: int, s: int) -> np.ndarray:
        """T-hat^{(m)} = S + sum_{k<=m} X^k at the grid pair (t, s)."""
        sp = self.lift.params
        dt = self.lift.grid.horizon / self.lift.grid.ncells
        acc = np.diag(np.exp(-(t - s) * dt * eigenvalues(sp))).astype(complex)
        for k in range(1, min(m_terms, self.lift.orders) + 1):
            acc = acc + self.lift.value(k, t, s)
        return acc

    def cocycle_residual(self, m_terms: int, triples=None) -> float:
        """max ||T-hat_{ts} - T-hat_{tu} T-hat_{us}|| / ||T-hat_{ts}|| over triples."""
        triples = self.lift.grid.midpoint_triples() if triples is None else triples
        worst = 0.0
        for t, u, s in triples:
            full = self.partial_sum(m_terms, t, s)
            prod = self.partial_sum(m_terms, t, u) @ self.partial_sum(m_terms, u, s)
            num = float(np.linalg.norm(full - prod, 2))
            den = max(float(np.linalg.norm(full, 2)), 1e-30)
            worst = max(worst, num / den)
        return worst


def extend_lift(lift: RoughLift, n_max: int) -> ItoMapSeries:
    """Extend a step-3 lift to orders 4..n_max via the Chen/tilde-sewing recursion.

    Each new order is the unique increment with
    tilde-delta X^n = sum_k X^{n-k} X^k vanishing at the finest scale; the
    builder realizes exactly that.  A norm ledger is checked for runaway
    growth, which would signal a sewing divergence at some order.
    """
    if n_max < 4:
        raise ValueError("extend_lift needs n_max >= 4")
    ext = build_lift(
        lift.driver,
        keep_level=lift.grid.level,
        n_orders=n_max,
        eta=lift.eta,
        kappa=lift.kappa,
    )
    series = ItoMapSeries(ext, n_max)
    norms = series.order_norms()
    for n in range(5, n_max + 1):
        prev, cur = norms[n - 1], norms[n]
        if prev > 0 and cur > 50.0 * max(prev, norms[1]):
            raise SewingError(f"lift extension diverges at order {n}")
    return series


# ---------------------------------------------------------------------------
# trees


@dataclass(frozen=True)
class Tree:
    left: "Tree | None" = None
    right: "Tree | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def d(self) -> int:
        return 1 if self.is_leaf else self.left.d + self.right.d

    @property
    def order(self) -> int:
        return self.d - 1

    def label(self) -> str:
        if self.is_leaf:
            return "o"
        return f"V({self.left.label()},{self.right.label()})"


LEAF = Tree()
VEE = Tree(LEAF, LEAF)

_ALIASES = {
    "o": LEAF,
    "v": VEE,
    "hv": Tree(VEE, LEAF),  # d = 3, vee grafted left
    "vh": Tree(LEAF, VEE),  # d = 3, vee grafted right
    "w": Tree(VEE, VEE),  # d = 4, cherry pair
    "hhv": Tree(Tree(VEE, LEAF), LEAF),  # d = 4, left comb
    "vhh": Tree(LEAF, Tree(LEAF, VEE)),  # d = 4, right comb
}


def parse_tree(name: str) -> Tree:
    """Parse a tree name: aliases (o, v, hv, vh, w, hhv, vhh) or V(a,b) syntax."""
    name = name.strip()
    if name in _ALIASES:
        return _ALIASES[name]
    if name.startswith("V(") and name.endswith(")"):
        body = name[2:-1]
        depth = 0
        for i, ch in enumerate(body):
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
            elif ch == "," and depth == 0:
                return Tree(parse_tree(body[:i]), parse_tree(body[i + 1 :]))
    raise ValueError(f"cannot parse tree name {name!r}")


def _mode_conv(a: np.ndarray, b: np.ndarray, nmodes: int) -> np.ndarray:
    """Pointwise product of coefficient arrays along axis 0, truncated."""
    pad = 4 * nmodes + 1
    fa = np.fft.fft(a, n=pad, axis=0)
    fb = np.fft.fft(b, n=pad, axis=0)
    full = np.fft.ifft(fa * fb, axis=0)
    return full[nmodes : 3 * nmodes + 1]


def _args_key(args) -> str:
    hsh = hashlib.blake2b(digest_size=12)
    for a in args:
        arr = a.array if isinstance(a, TwoLeg) else np.asarray(a)
        hsh.update(np.ascontiguousarray(arr).tobytes())
    return hsh.hexdigest()


@dataclass
class TwoLeg:
    """A two-leg tensor argument (shape (m, m)) for a tree operator slot.

    Plain arrays are always read as single-leg vectors (possibly probe
    batched along a trailing axis); tensors must be wrapped explicitly so
    the two cases can never be confused.
    """

    array: np.ndarray


@dataclass
class TreeOperator:
    """Tree-indexed iterated convolution integral, applied on demand.

    Arguments are given left to right as arrays with one leg (shape (m,) or
    batched (m, P)) or two legs (shape (m, m)); group boundaries must align
    with the subtree spans.  Evaluation runs anchored left-point scans over
    the driver's fine cells, so the tree coboundary identities hold exactly
    against the multiplicative lift built from the same driver.
    """

    tree: Tree
    driver: DriverPath
    cache_paths: bool = True
    _memo: dict = field(default_factory=dict, repr=False)

    @property
    def params(self) -> SpectralParams:
        return self.driver.spectral

    @staticmethod
    def _legs(a) -> int:
        return 2 if isinstance(a, TwoLeg) else 1

    def _split_args(self, tree: Tree, args: list):
        need = tree.d
        taken, got = [], 0
        rest = list(args)
        while got < need:
            if not rest:
                raise ValueError("not enough argument legs for the tree")
            a = rest.pop(0)
            taken.append(a)
            got += self._legs(a)
        if got != need:
            raise ValueError("argument group boundaries do not align with subtree spans")
        return taken, rest

    def _leaf_values(self, a: np.ndarray, nsteps: int):
        lam = eigenvalues(self.params)
        dt = self.driver.dt
        ts = np.arange(nsteps + 1) * dt
        dec = np.exp(-np.outer(lam, ts))  # (m, K+1)
        if a.ndim == 1:
            return dec * a[:, None]
        return dec[:, :, None] * a[:, None, :]

    def _vee_tensor_values(self, theta: np.ndarray, lo: int, nsteps: int):
        """X^vee applied to a general 2-leg tensor, anchored at lo."""
        p = self.params
        lam = eigenvalues(p)
        dt = self.driver.dt
        m = p.size
        prods = np.zeros((m, nsteps + 1), dtype=complex)
        bins = (np.arange(m)[:, None] + np.arange(m)[None, :]).ravel()
        keep = (bins >= p.nmodes) & (bins <= 3 * p.nmodes)
        for k in range(nsteps + 1):
            d = np.exp(-lam * (k * dt))
            scaled = (d[:, None] * theta * d[None, :]).ravel()
            acc = np.bincount(bins[keep] - p.nmodes, weights=scaled[keep].real, minlength=m)
            acci = np.bincount(bins[keep] - p.nmodes, weights=scaled[keep].imag, minlength=m)
            prods[:, k] = acc + 1j * acci
        return self._scan(prods[:, :-1], lo, nsteps)

    def _scan(self, prod_vals: np.ndarray, lo: int, nsteps: int) -> np.ndarray:
        """Left-point mild scan: out_{k+1} = S_dt (out_k + dx_k * prod_k)."""
        p = self.params
        dt = self.driver.dt
        dec = np.exp(-dt * eigenvalues(p))
        dx = self.driver.cells[:, lo : lo + nsteps]
        if prod_vals.ndim == 3:
            src = _mode_conv(dx[:, :, None], prod_vals, p.nmodes)
        else:
            src = _mode_conv(dx, prod_vals, p.nmodes)
        out_shape = (p.size, nsteps + 1) + prod_vals.shape[2:]
        out = np.zeros(out_shape, dtype=complex)
        for i in range(p.size):
            out[i, 1:] = lfilter([dec[i]], [1.0, -dec[i]], src[i], axis=0)
        return out

    def _values(self, tree: Tree, args: list, lo: int, nsteps: int) -> np.ndarray:
        """X^tree_{(u, lo)}(args) for u = lo .. lo + nsteps (fine indices)."""
        if tree.is_leaf:
            if isinstance(args[0], TwoLeg):
                raise ValueError("a leaf consumes a single-leg argument")
            return self._leaf_values(np.asarray(args[0], dtype=complex), nsteps)
        if tree == VEE and len(args) == 1 and isinstance(args[0], TwoLeg):
            return self._vee_tensor_values(
                np.asarray(args[0].array, dtype=complex), lo, nsteps
            )
        largs, rest = self._split_args(tree.left, args)
        rargs, leftover = self._split_args(tree.right, rest)
        if leftover:
            raise ValueError("too many argument legs for the tree")
        v1 = self._values(tree.left, largs, lo, nsteps)
        v2 = self._values(tree.right, rargs, lo, nsteps)
        if v1.ndim != v2.ndim:  # mixed plain/batched slots broadcast over probes
            if v1.ndim == 2:
                v1 = v1[:, :, None]
            else:
                v2 = v2[:, :, None]
        prod = _mode_conv(v1, v2, self.params.nmodes)
        return self._scan(prod[:, :-1], lo, nsteps)

    def apply_path(self, s_fine: int, t_fine: int, args: list) -> np.ndarray:
        """Values of X^tree_{(u, s)}(args) for all fine u in [s, t]."""
        if t_fine < s_fine:
            raise GridError("simplex order violated")
        key = None
        if self.cache_paths:
            key = (s_fine, t_fine, _args_key(args))
            if key in self._memo:
                return self._memo[key]
        out = self._values(self.tree, list(args), s_fine, t_fine - s_fine)
        if key is not None:
            if len(self._memo) > 256:
                self._memo.clear()
            self._memo[key] = out
        return out

    def apply(self, t_fine: int, s_fine: int, args: list) -> np.ndarray:
        """X^tree_{(t, s)}(args) at one fine pair."""
        return self.apply_path(s_fine, t_fine, args)[:, t_fine - s_fine]


def vee_tensor(driver: DriverPath, t_fine: int, s_fine: int) -> np.ndarray:
    """Materialized order-3 tensor of X^vee at a fine pair: [i, j, l] slots.

    Left-point sum over the cells of [s, t]; kept for d = 2 only (the d >= 3
    operators are applied on demand instead of materialized).
    """
    sp = driver.spectral
    if sp.nmodes > 12:
        raise MemoryError("materialized vee tensors are limited to N <= 12")
    m = sp.size
    lam = eigenvalues(sp)
    dt = driver.dt
    idx, mask = _band_index3(sp.nmodes)
    out = np.zeros((m, m, m), dtype=complex)
    pairsum = lam[:, None] + lam[None, :]
    for k in range(s_fine, t_fine):
        w_left = np.exp(-lam * ((t_fine - k) * dt))
        w_right = np.exp(-pairsum * ((k - s_fine) * dt))
        dx = driver.cells[:, k]
        out += w_left[:, None, None] * np.where(mask, dx[idx], 0.0) * w_right[None, :, :]
    return out


def build_tree_ops(driver: DriverPath, trees: list[str | Tree]) -> dict[str, TreeOperator]:
    """Apply-on-demand operators for the requested trees (d <= 4)."""
    out = {}
    for spec_name in trees:
        tree = parse_tree(spec_name) if isinstance(spec_name, str) else spec_name
        if tree.d > 4:
            raise ValueError(f"trees with more than 4 leaves are unsupported ({tree.label()})")
        name = spec_name if isinstance(spec_name, str) else tree.label()
        out[name] = TreeOperator(tree, driver)
    return out
