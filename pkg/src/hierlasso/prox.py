"""Exact solver for the per-row prox subproblem.

Each gradient sweep decouples into p independent problems of the form

    min  (1/2t)(b+ - bp)^2 + (1/2t)(b- - bm)^2 + (1/2t)||th - tv||^2
         + (lam/2)||th||_1
    s.t. ||th||_1 <= b+ + b-,  b+ >= 0,  b- >= 0.

In terms of the optimal dual alpha of the hierarchy constraint the
solution is th = S(tv, t(lam/2 + alpha)), b+- = [bp/bm + t alpha]_+, and
alpha is the root of a nonincreasing piecewise-linear function f whose
knots are known in closed form. The root is located exactly by linear
interpolation between adjacent knots that bracket the sign change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import soft_threshold

KNOT_DEDUP_TOL = 1e-12


@dataclass
class ProxInput:
    beta_plus_tilde: float
    beta_minus_tilde: float
    theta_tilde: np.ndarray
    lam: float
    t: float

    def __post_init__(self):
        self.theta_tilde = np.asarray(self.theta_tilde, dtype=float).ravel()
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.t <= 0:
            raise ValueError("step size t must be positive")


@dataclass
class ProxOutput:
    beta_plus: float
    beta_minus: float
    theta: np.ndarray
    alpha_hat: float


def eval_f(alpha: float, inp: ProxInput) -> float:
    """Dual gap function ||S(tv, t(lam/2+a))||_1 - [bp+ta]_+ - [bm+ta]_+.

    Nonincreasing and piecewise linear in alpha; its nonnegative root (or
    sign of f(0)) determines the dual of the hierarchy constraint.
    """
    t, lam = inp.t, inp.lam
    thresh = t * (lam / 2.0 + alpha)
    l1 = np.maximum(np.abs(inp.theta_tilde) - thresh, 0.0).sum()
    return float(
        l1
        - max(inp.beta_plus_tilde + t * alpha, 0.0)
        - max(inp.beta_minus_tilde + t * alpha, 0.0)
    )


def _primal_from_alpha(alpha: float, inp: ProxInput) -> ProxOutput:
    t, lam = inp.t, inp.lam
    theta = soft_threshold(inp.theta_tilde, t * (lam / 2.0 + alpha))
    return ProxOutput(
        beta_plus=max(inp.beta_plus_tilde + t * alpha, 0.0),
        beta_minus=max(inp.beta_minus_tilde + t * alpha, 0.0),
        theta=theta,
        alpha_hat=alpha,
    )


def _knots(inp: ProxInput) -> np.ndarray:
    """Nonnegative breakpoints of f, sorted and deduplicated."""
    t, lam = inp.t, inp.lam
    cand = np.concatenate([
        np.abs(inp.theta_tilde) / t - lam / 2.0,
        [-inp.beta_plus_tilde / t, -inp.beta_minus_tilde / t],
    ])
    cand = np.sort(cand[cand >= 0.0])
    if cand.size == 0:
        return cand
    keep = np.ones(cand.size, dtype=bool)
    keep[1:] = np.diff(cand) > KNOT_DEDUP_TOL
    return cand[keep]


def _eval_f_grid(grid: np.ndarray, inp: ProxInput) -> np.ndarray:
    """f evaluated at many duals at once (vectorized over the grid)."""
    t = inp.t
    thresh = t * (inp.lam / 2.0 + grid)
    l1 = np.maximum(np.abs(inp.theta_tilde)[None, :] - thresh[:, None], 0.0).sum(axis=1)
    l1 -= np.maximum(inp.beta_plus_tilde + t * grid, 0.0)
    l1 -= np.maximum(inp.beta_minus_tilde + t * grid, 0.0)
    return l1


def solve_onerow(inp: ProxInput) -> ProxOutput:
    """Solve one row subproblem exactly via the dual breakpoints."""
    if eval_f(0.0, inp) <= 0.0:
        return _primal_from_alpha(0.0, inp)

    knots = _knots(inp)
    grid = np.concatenate([[0.0], knots]) if knots.size else np.array([0.0])
    fvals = _eval_f_grid(grid, inp)

    hit = np.flatnonzero(np.abs(fvals) <= KNOT_DEDUP_TOL)
    if hit.size:
        return _primal_from_alpha(float(grid[hit[0]]), inp)

    neg = np.flatnonzero(fvals < 0.0)
    if neg.size:
        i2 = int(neg[0])
        p1, p2 = grid[i2 - 1], grid[i2]
        f1, f2 = fvals[i2 - 1], fvals[i2]
        # f is linear between adjacent knots, so this root is exact.
        alpha = p1 - f1 * (p2 - p1) / (f2 - f1)
        return _primal_from_alpha(float(alpha), inp)

    # f > 0 at every knot: on the final linear piece all soft-thresholds
    # vanish and f(a) = -(bp + bm) - 2 t a.
    alpha = -(inp.beta_plus_tilde + inp.beta_minus_tilde) / (2.0 * inp.t)
    alpha = max(alpha, float(grid[-1]))
    return _primal_from_alpha(float(alpha), inp)


def onerow_oracle(inp: ProxInput, grid_size: int = 2000) -> ProxOutput:
    """Dense-search reference solver, for tests only.

    Scans candidate duals on a fine grid plus all breakpoints, refines the
    sign change of f by bisection (independent of the interpolation used
    by :func:`solve_onerow`), and returns the feasible candidate with the
    smallest primal objective.
    """
    if inp.theta_tilde.size > 12:
        raise ValueError("oracle is restricted to small rows")

    t, lam = inp.t, inp.lam
    hi = max(
        1.0,
        np.abs(inp.theta_tilde).max(initial=0.0) / t,
        abs(inp.beta_plus_tilde) / t,
        abs(inp.beta_minus_tilde) / t,
    )
    cand = [np.linspace(0.0, 2.0 * hi, grid_size), _knots(inp), [0.0]]

    if eval_f(0.0, inp) > 0.0:
        lo, up = 0.0, 2.0 * hi
        while eval_f(up, inp) > 0.0:
            up *= 2.0
        for _ in range(120):
            mid = 0.5 * (lo + up)
            if eval_f(mid, inp) > 0.0:
                lo = mid
            else:
                up = mid
        cand.append([lo, up, 0.5 * (lo + up)])

    alphas = np.unique(np.concatenate([np.asarray(c, dtype=float) for c in cand]))
    thresh = t * (lam / 2.0 + alphas)
    theta_c = soft_threshold(inp.theta_tilde[None, :], thresh[:, None])
    bp_c = np.maximum(inp.beta_plus_tilde + t * alphas, 0.0)
    bm_c = np.maximum(inp.beta_minus_tilde + t * alphas, 0.0)
    theta_l1 = np.abs(theta_c).sum(axis=1)

    obj = (bp_c - inp.beta_plus_tilde) ** 2 / (2 * t)
    obj += (bm_c - inp.beta_minus_tilde) ** 2 / (2 * t)
    obj += ((theta_c - inp.theta_tilde) ** 2).sum(axis=1) / (2 * t)
    obj += lam / 2.0 * theta_l1

    feas_tol = 1e-9 * max(1.0, hi * t)
    obj[theta_l1 > bp_c + bm_c + feas_tol] = np.inf
    best = int(np.argmin(obj))
    return ProxOutput(
        beta_plus=float(bp_c[best]),
        beta_minus=float(bm_c[best]),
        theta=theta_c[best],
        alpha_hat=float(alphas[best]),
    )


def _solve_tight_batch(bp_t, bm_t, theta_t, lam, t):
    """Exact knot search for a batch of rows with f(0) > 0.

    Same algorithm as :func:`solve_onerow`, vectorized: candidates are the
    nonnegative breakpoints (negatives clipped to 0), sorted per row; f is
    nonincreasing along them, so the first sign change brackets the root
    of the linear piece. Returns (beta_plus, beta_minus, theta, alpha).
    """
    rows, m = theta_t.shape
    cand = np.concatenate([
        np.zeros((rows, 1)),
        np.abs(theta_t) / t - lam / 2.0,
        -bp_t[:, None] / t,
        -bm_t[:, None] / t,
    ], axis=1)
    np.maximum(cand, 0.0, out=cand)
    cand.sort(axis=1)

    thresh = t * (lam / 2.0 + cand)                       # (rows, K)
    l1 = np.maximum(
        np.abs(theta_t)[:, None, :] - thresh[:, :, None], 0.0
    ).sum(axis=2)
    fv = l1 - np.maximum(bp_t[:, None] + t * cand, 0.0) \
            - np.maximum(bm_t[:, None] + t * cand, 0.0)

    neg = fv < 0.0
    has_neg = neg.any(axis=1)
    i2 = np.argmax(neg, axis=1)
    i2 = np.maximum(i2, 1)
    i1 = i2 - 1
    take = np.arange(rows)
    f1, f2 = fv[take, i1], fv[take, i2]
    p1, p2 = cand[take, i1], cand[take, i2]
    denom = np.where(f2 != f1, f2 - f1, -1.0)
    alpha = p1 - f1 * (p2 - p1) / denom

    hit = np.abs(fv) <= KNOT_DEDUP_TOL
    has_hit = hit.any(axis=1)
    hit_idx = np.argmax(hit, axis=1)
    alpha = np.where(has_hit, cand[take, hit_idx], alpha)

    # all-positive f: root on the final piece where every threshold is dead
    tail = np.maximum(-(bp_t + bm_t) / (2.0 * t), cand[:, -1])
    alpha = np.where(~has_neg & ~has_hit, tail, alpha)

    theta = soft_threshold(theta_t, t * (lam / 2.0 + alpha)[:, None])
    bp = np.maximum(bp_t + t * alpha, 0.0)
    bm = np.maximum(bm_t + t * alpha, 0.0)
    return bp, bm, theta, alpha


def solve_rows(
    bp_t: np.ndarray,
    bm_t: np.ndarray,
    theta_t: np.ndarray,
    lam: float,
    t: float,
):
    """Apply the row prox to all p rows of one sweep.

    ``theta_t`` is (p, p-1), rows in basis order. Rows whose hierarchy
    constraint is slack at alpha = 0 reduce to closed-form thresholding
    and are handled in one shot; the rest go through the exact knot
    search, batched. Returns (beta_plus, beta_minus, theta_rows, alpha).
    """
    p = bp_t.shape[0]
    thresh0 = t * lam / 2.0
    theta0 = soft_threshold(theta_t, thresh0) if theta_t.size else theta_t.copy()
    f0 = (
        (np.abs(theta0).sum(axis=1) if theta_t.size else np.zeros(p))
        - np.maximum(bp_t, 0.0)
        - np.maximum(bm_t, 0.0)
    )

    bp = np.maximum(bp_t, 0.0)
    bm = np.maximum(bm_t, 0.0)
    theta = theta0
    alpha = np.zeros(p)

    tight = np.flatnonzero(f0 > 0.0)
    if tight.size:
        tb, tm, tt, ta = _solve_tight_batch(
            bp_t[tight], bm_t[tight], theta_t[tight], lam, t
        )
        bp[tight], bm[tight] = tb, tm
        theta[tight] = tt
        alpha[tight] = ta
    return bp, bm, theta, alpha
