"""Quantitative regularity verification: Hoelder-exponent estimation, the
Garsia-Rodemich-Rumsey functional, Monte Carlo scaling of lift second
moments, and the eigenvalue-sum convergence checks.

All scaling verdicts are one-sided: the theory provides upper bounds
E ||X^tau_ts||^2 <= C (t-s)^p with unknown constants, so a PASS means the
fitted log-log slope is at least the predicted exponent minus a fixed slack.
Negative controls run a configuration just past a threshold and must FAIL.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .grids import DyadicGrid
from .hatcalc import HatTable2, hat_holder3, tilde_delta, value_norm
from .lift import TreeOperator, build_lift, parse_tree, vee_tensor
from .noise import NoiseParams, sample_driver
from .spectral import SpectralParams, eigenvalues

SLOPE_SLACK = 0.15


# ---------------------------------------------------------------------------
# Hoelder exponent estimation


@dataclass
class HolderEstimate:
    exponent: float
    norm: float
    fitted_slope: float
    levels: list


def estimate_holder(
    table, exponent_grid=None, alpha: float = 0.0, beta: float = 0.0, metric: str = "op",
    min_levels: int = 3,
) -> HolderEstimate:
    """Largest exponent on the grid with a level-stable norm.

    The slope is fitted on the per-level root-mean-square increment (weighted
    least squares, the two coarsest levels down-weighted for semigroup
    transients); the RMS curve avoids the extreme-value log factor that
    biases per-level maxima for stochastic paths.  The returned exponent is
    the largest grid candidate not exceeding the fitted slope whose sup-norm
    stays level-stable (consecutive-level norm ratio below 2), and the norm
    reported is the discrete sup at that exponent.
    """
    grid = table.grid
    if grid.level < min_levels:
        raise ValueError(f"need at least {min_levels} dyadic levels of pairs")
    if exponent_grid is None:
        exponent_grid = np.round(np.arange(0.05, 1.51, 0.05), 3)
    levels = list(range(1, grid.level + 1))
    rms_log, sup, steps = [], [], []
    for n in levels:
        mags = np.array(
            [
                value_norm(np.asarray(table.value(t, s)), table.params, alpha, beta, metric)
                for t, s in grid.adjacent_pairs(n)
            ]
        )
        if np.max(mags) > 0:
            rms_log.append(np.log(np.sqrt(np.mean(mags**2))))
            sup.append(np.max(mags))
            steps.append(np.log(grid.step(n)))
    if len(rms_log) < 2:
        raise ValueError("increment vanishes on the grid")
    w = np.ones(len(rms_log))
    w[:2] = 0.25
    A = np.vstack([steps, np.ones_like(steps)]).T
    W = np.diag(w)
    slope, _ = np.linalg.solve(A.T @ W @ A, A.T @ W @ np.array(rms_log))
    candidates = [m for m in exponent_grid if m <= slope + 0.025]
    sup = np.array(sup)
    hsteps = np.exp(np.array(steps))
    # stability guard: the sup-norm may drift by slowly varying extreme-value
    # factors, but a geometric trend (growth above ~1.3 per halving) signals a
    # genuine exponent mismatch and steps the candidate down
    while candidates:
        mu = max(candidates)
        norms = sup / hsteps**mu
        ns = np.arange(len(norms))
        trend = np.exp(np.polyfit(ns, np.log(np.maximum(norms, 1e-300)), 1)[0])
        if trend < 1.30:
            break
        candidates.remove(mu)
    else:
        mu = float(exponent_grid[0])
    from .hatcalc import hat_holder2

    nrm = hat_holder2(table, mu, alpha=alpha, beta=beta, metric=metric)
    return HolderEstimate(float(mu), nrm, float(slope), levels)


def estimate_holder_scalar(grid: DyadicGrid, values: np.ndarray, exponent_grid=None) -> HolderEstimate:
    """Exponent fit for a scalar path given at the grid points."""

    class _Wrap:
        def __init__(self):
            self.grid = grid
            self.params = SpectralParams(1, grid.horizon)

        def value(self, t, s):
            out = np.zeros(3, dtype=complex)
            out[1] = values[t] - values[s]
            return out

    return estimate_holder(_Wrap(), exponent_grid=exponent_grid, metric="op")


# ---------------------------------------------------------------------------
# GRR functional


@dataclass
class GrrEstimate:
    gamma: float
    p: float
    beta: float
    alpha: float
    u_value: float
    tilde_delta_norm: float
    holder_norm: float
    fitted_constant: float
    u_by_level: dict
    divergent: bool


def grr_bound(
    R: HatTable2,
    gamma: float,
    p: float = 4.0,
    beta: float = 0.0,
    alpha: float = 0.0,
    metric: str = "HS",
    tilde_norm: float | None = None,
    quad_levels=(4, 5, 6),
) -> GrrEstimate:
    """Quadrature estimate of the GRR functional and the implied bound.

    U is the double integral of (|R_ts| / (t-s)^gamma)^p over the simplex,
    approximated by all sub-grid pairs at each quadrature level times the
    cell area; growth of U under refinement flags a divergent configuration
    (gamma above the attainable regularity).
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    grid = R.grid
    u_by_level = {}
    for lev in quad_levels:
        lev = min(lev, grid.level)
        stride = grid.stride(lev)
        npts = (1 << lev) + 1
        dt = grid.step(lev)
        tot = 0.0
        for i in range(1, npts):
            for j in range(i):
                tau = (i - j) * dt
                v = value_norm(np.asarray(R.value(i * stride, j * stride)), R.params, alpha, beta, metric)
                tot += (v / tau**gamma) ** p * dt * dt
        u_by_level[lev] = tot ** (1.0 / p)
    levels = sorted(u_by_level)
    us = [u_by_level[k] for k in levels]
    divergent = len(us) >= 3 and us[-1] > 1.5 * us[-2] > 1.5**2 * us[-3] / 1.5
    divergent = divergent and us[-1] > 2.0 * us[0]
    u_val = us[-1]
    if tilde_norm is None:
        td = tilde_delta(R)
        tilde_norm = hat_holder3(td, gamma, alpha=alpha, beta=beta, metric=metric)
    from .hatcalc import hat_holder2

    hn = hat_holder2(R, gamma, alpha=alpha, beta=beta, metric=metric)
    denom = u_val + tilde_norm
    const = hn / denom if denom > 0 else np.inf
    return GrrEstimate(gamma, p, beta, alpha, u_val, tilde_norm, hn, const, u_by_level, divergent)


# ---------------------------------------------------------------------------
# Monte Carlo scaling of lift norms


@dataclass
class ScalingFit:
    target: str
    samples: int
    ladder: list
    means: list
    slope: float
    ci_halfwidth: float
    predicted: float
    verdict: str
    opnorm_slope: float | None = None
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "target": self.target,
            "samples": self.samples,
            "ladder": list(map(float, self.ladder)),
            "means": list(map(float, self.means)),
            "slope": self.slope,
            "ci_halfwidth": self.ci_halfwidth,
            "predicted": self.predicted,
            "verdict": self.verdict,
            "opnorm_slope": self.opnorm_slope,
            **self.meta,
        }


def predicted_exponent(target: str, eta: float, nu: float, hurst: float | None = None) -> float:
    """Predicted log-log slope of E||X||^2_HS against the time gap.

    Trees follow the second-moment scaling |tau| Delta - 1/2 with
    Delta = 1 - 2 eta + nu (the arbitrarily small epsilon loss is absorbed
    into the verdict slack).  The multiplicative lift orders follow the
    step-3 exponent ladder with kappa0 = 1/4 - eta + nubar/2.
    """
    nubar = min(nu, 0.5)
    if target.startswith("tree:"):
        tree = parse_tree(target.split(":", 1)[1])
        delta = 1.0 - 2.0 * eta + nu
        return tree.order * delta - 0.5
    kappa0 = 0.25 - eta + nubar / 2
    if hurst is not None:
        gamma_t = hurst - 0.25 + nubar / 2
        if target == "x1":
            return 2.0 * gamma_t
        raise ValueError("fbm predictions are provided for x1 only")
    order = {"x1": 1, "x2": 2, "x3": 3}.get(target)
    if order is None:
        raise ValueError(f"unknown target {target!r}")
    return 2.0 * order * kappa0


def _wls_slope(log_tau, log_mean, sigmas):
    w = 1.0 / np.maximum(np.asarray(sigmas), 1e-6) ** 2
    w[-2:] *= 0.25  # two largest gaps carry semigroup transients
    A = np.vstack([log_tau, np.ones_like(log_tau)]).T
    W = np.diag(w)
    cov = np.linalg.inv(A.T @ W @ A)
    beta = cov @ (A.T @ W @ np.asarray(log_mean))
    return float(beta[0]), float(np.sqrt(cov[0, 0]))


def mc_scaling(
    target: str,
    params: NoiseParams,
    samples: int = 200,
    ladder=(7, 8, 9, 10, 11),
    eta: float = 0.3,
    kappa: float = 0.3,
    space: tuple | None = None,
    nprobe: int = 32,
    predicted: float | None = None,
    fine_pad: int = 4,
    seed_offset: int = 0,
) -> ScalingFit:
    """Fit the log-log slope of E||X^target_{(2^-k T, 0)}||^2_HS over a dyadic
    gap ladder from Monte Carlo replicas.

    The ladder is anchored at 0, so each replica only needs the driver on
    [0, 2^-k1 T]; a short-horizon driver with the same number of fine cells
    is sampled directly (identical in law).  Hilbert-Schmidt norms of the
    materialized orders are summed exactly; trees with three or four leaves
    are probed by independent Gaussian slot vectors in the weighted basis,
    which gives an unbiased estimate of the squared HS norm.
    """
    if samples < 2:
        raise ValueError("need at least 2 samples")
    ladder = sorted(ladder)
    k1, k2 = ladder[0], ladder[-1]
    npts = len(ladder)
    sub_lf = (k2 + fine_pad) - k1
    sub = replace(
        params, fine_level=sub_lf, horizon=params.horizon * 2.0 ** (-k1)
    )
    sp = sub.spectral
    lam = eigenvalues(sp)
    is_tree = target.startswith("tree:")
    tree = parse_tree(target.split(":", 1)[1]) if is_tree else None
    if is_tree and sp.nmodes > 8 and tree.d == 2:
        raise MemoryError("materialized d=2 tree tensors need N <= 8; lower the truncation")
    if space is None:
        space = (eta, eta)
    beta_s, alpha_s = space

    keep = k2 - k1
    hs_acc = np.zeros((samples, npts))
    op_acc = np.zeros((samples, npts)) if not is_tree else None
    order = {"x1": 1, "x2": 2, "x3": 3}.get(target, 0)

    for rep in range(samples):
        drv = sample_driver(sub, replica=rep + seed_offset)
        if is_tree:
            if tree.d == 2:
                for i, k in enumerate(ladder):
                    tf = 1 << (sub_lf - (k - k1))
                    T = vee_tensor(drv, tf, 0)
                    w = (
                        (lam**alpha_s)[:, None, None]
                        * T
                        * (lam**-beta_s)[None, :, None]
                        * (lam**-beta_s)[None, None, :]
                    )
                    hs_acc[rep, i] = np.sum(np.abs(w) ** 2)
            else:
                rng = np.random.default_rng(
                    np.random.SeedSequence(entropy=params.seed, spawn_key=(7, rep + seed_offset))
                )
                probes = [
                    (lam**-beta_s)[:, None]
                    * (rng.standard_normal((sp.size, nprobe)) + 1j * rng.standard_normal((sp.size, nprobe)))
                    / np.sqrt(2.0)
                    for _ in range(tree.d)
                ]
                op = TreeOperator(tree, drv, cache_paths=False)
                path = op.apply_path(0, drv.ncells, probes)
                for i, k in enumerate(ladder):
                    tf = 1 << (sub_lf - (k - k1))
                    hs_acc[rep, i] = np.mean(
                        np.sum((lam ** (2 * alpha_s))[:, None] * np.abs(path[:, tf]) ** 2, axis=0)
                    )
        else:
            lift = build_lift(drv, keep_level=keep, n_orders=order, eta=eta, kappa=kappa)
            for i, k in enumerate(ladder):
                tg = 1 << (keep - (k - k1))
                mat = lift.value(order, tg, 0)
                w = (lam**alpha_s)[:, None] * mat * (lam**-beta_s)[None, :]
                hs_acc[rep, i] = np.sum(np.abs(w) ** 2)
                op_acc[rep, i] = np.linalg.norm(w, 2) ** 2

    taus = np.array([params.horizon * 2.0**-k for k in ladder])
    means = pairwise_mean(hs_acc)
    ses = hs_acc.std(axis=0, ddof=1) / np.sqrt(samples)
    log_sigma = ses / means
    slope, se_slope = _wls_slope(np.log(taus), np.log(means), log_sigma)
    ci = 1.96 * se_slope
    if predicted is None:
        predicted = predicted_exponent(target, eta, params.nu, params.hurst)
    verdict = "PASS" if slope >= predicted - SLOPE_SLACK else "FAIL"
    op_slope = None
    if op_acc is not None:
        om = pairwise_mean(op_acc)
        op_slope, _ = _wls_slope(np.log(taus), np.log(om), np.ones(npts))
    return ScalingFit(
        target,
        samples,
        list(taus),
        list(means),
        slope,
        ci,
        predicted,
        verdict,
        op_slope,
        meta={"eta": eta, "nu": params.nu, "space": [beta_s, alpha_s], "fine_level": sub_lf},
    )


def pairwise_mean(arr: np.ndarray) -> np.ndarray:
    """Mean over axis 0 via pairwise tree reduction (deterministic order)."""
    n = arr.shape[0]
    work = arr.astype(float).copy()
    count = n
    while count > 1:
        half = count // 2
        work[:half] = work[:half] + work[half : 2 * half]
        if count % 2:
            work[half] = work[2 * half]
            count = half + 1
        else:
            count = half
    return work[0] / n


# ---------------------------------------------------------------------------
# eigenvalue-sum and double-integral lemmas


@dataclass
class EigenSumReport:
    alpha: float
    beta: float
    ratios: dict
    bounded: bool


def convolution_sum_check(alpha: float, beta: float, kmax: int = 64, truncations=(3000, 10000)) -> EigenSumReport:
    """Check sum_{i+j=k} lam_i^-alpha lam_j^-beta against lam_k^{-(alpha + min(beta,1/2) - 1/2)}.

    Bounded ratios (stable in the truncation) verify the convolution bound;
    for alpha + beta <= 1/2 the sum itself diverges with the truncation and
    the report flags it as unbounded.
    """
    betabar = min(beta, 0.5)
    ratios = {}
    for K in truncations:
        i = np.arange(-K, K + 1)
        lam_i = 1.0 + (2 * np.pi * i) ** 2
        vals = []
        for k in (1, 2, 4, 8, 16, 32, kmax):
            lam_j = 1.0 + (2 * np.pi * (k - i)) ** 2
            s = np.sum(lam_i**-alpha * lam_j**-beta)
            lam_k = 1.0 + (2 * np.pi * k) ** 2
            vals.append(s / lam_k ** -(alpha + betabar - 0.5))
        ratios[K] = vals
    k1, k2 = truncations[0], truncations[-1]
    drift = max(abs(a - b) / max(abs(b), 1e-30) for a, b in zip(ratios[k1], ratios[k2]))
    spread = max(ratios[k2]) / max(min(ratios[k2]), 1e-30)
    bounded = drift < 0.05 and spread < 50.0
    return EigenSumReport(alpha, beta, ratios, bounded)


@dataclass
class DoubleIntegralReport:
    hurst: float
    a: float
    b: float
    values: dict
    converges: bool


def kernel_integral_check(hurst: float, a: float, b: float, resolutions=(100, 200, 400, 800)) -> DoubleIntegralReport:
    """Midpoint quadrature of the singular kernel double integral.

    The integral of |u-v|^{2H-2} |2-u-v|^{-a} |u+v|^{-b} over the unit square
    converges iff 2H - a > 0 and 2H - b > 0; refinement behavior decides.
    """
    vals = {}
    for M in resolutions:
        x = (np.arange(M) + 0.5) / M
        u, v = np.meshgrid(x, x, indexing="ij")
        gap = np.abs(u - v)
        np.fill_diagonal(gap, 1.0)  # diagonal cells excluded below
        kern = gap ** (2 * hurst - 2.0)
        np.fill_diagonal(kern, 0.0)
        kern = kern * np.abs(2.0 - u - v) ** (-a) * np.abs(u + v) ** (-b)
        vals[M] = float(np.sum(kern)) / M**2
    ms = sorted(vals)
    diffs = [abs(vals[m2] - vals[m1]) for m1, m2 in zip(ms, ms[1:])]
    converges = diffs[-1] < 0.75 * diffs[0] and vals[ms[-1]] < 2.0 * vals[ms[0]]
    return DoubleIntegralReport(hurst, a, b, vals, converges)
