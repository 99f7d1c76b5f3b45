"""Degrees-of-freedom machinery for the strongly hierarchical fit.

The fit is a piecewise-affine function of the response; on the affine
piece selected by the active sets, the fitted values move inside the
column space of X-tilde restricted to the null space of the equality and
inactive-inequality rows. The unbiased estimate is the rank of that
restriction; an interpretable bound counts active coefficients minus the
tight constraints whose main effect has exactly one positive part. A
Monte-Carlo harness estimates the definition sum_i cov(y_i, yhat_i)/sigma^2
directly for cross-checking.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import Dataset, FitState, InteractionBasis, fitted_centered
from .strong import AdmmOptions, fit_strong_path
from .weak import SolveOptions

# Adjudicated symmetry-row sign pattern; "as_printed" keeps the variant
# where both ordered copies enter with the same sign.
R8_DEFAULT = "symmetric"


@dataclass
class ActiveSets:
    """Index sets read off a converged strong fit."""

    tight: np.ndarray            # (p,) bool: ||theta_j||_1 == beta+_j + beta-_j
    pos_beta_plus: np.ndarray    # (p,) bool
    pos_beta_minus: np.ndarray   # (p,) bool
    pos_theta_plus: np.ndarray   # (p, p) bool, zero diagonal
    pos_theta_minus: np.ndarray  # (p, p) bool

    @property
    def p(self) -> int:
        return self.tight.shape[0]


@dataclass
class ConstraintSystem:
    """Stacked equality and inactive-constraint rows over the split
    coordinates (beta+, beta-, theta+, theta-)."""

    d_inactive: np.ndarray   # rows x (2p + 2p^2)
    x_tilde: np.ndarray      # n x (2p + 2p^2)
    w: np.ndarray            # penalty weights per coordinate
    row_counts: dict


def extract_active_sets(state: FitState, tol: float = 1e-8) -> ActiveSets:
    """Read the tight/positive sets off a converged strong fit.

    Tightness is measured on the inner (pre-symmetrization) theta when
    available, because the row prox satisfies the hierarchy constraints
    exactly there; supports are read off the symmetric theta.
    """
    p = state.p
    theta = state.theta
    thr_t = tol * max(1.0, float(np.abs(theta).max(initial=0.0)))
    bmax = float(max(state.beta_plus.max(initial=0.0), state.beta_minus.max(initial=0.0)))
    thr_b = tol * max(1.0, bmax)

    th_gap = state.theta_inner if state.theta_inner is not None else theta
    bsum = state.beta_plus + state.beta_minus
    gap = bsum - np.abs(th_gap).sum(axis=1)
    tight = np.abs(gap) <= tol * np.maximum(1.0, bsum)

    return ActiveSets(
        tight=tight,
        pos_beta_plus=state.beta_plus > thr_b,
        pos_beta_minus=state.beta_minus > thr_b,
        pos_theta_plus=theta > thr_t,
        pos_theta_minus=-theta > thr_t,
    )


def build_constraint_system(
    sets: ActiveSets,
    data: Dataset,
    basis: InteractionBasis,
    lam: float,
    r8_sign: str = R8_DEFAULT,
) -> ConstraintSystem:
    """Assemble the inactive-constraint rows and the split design.

    Coordinates are (beta+, beta-, theta+, theta-) with the theta blocks
    laid out row-major including the (zeroed) diagonal. Row families:
    tight-constraint rows, zero rows for each nonpositive coordinate,
    diagonal rows, and one symmetry row per unordered pair.
    """
    if r8_sign not in ("symmetric", "as_printed"):
        raise ValueError(f"unknown r8_sign {r8_sign!r}")
    p = sets.p
    d = 2 * p + 2 * p * p
    off_p, off_m = 0, p
    off_tp, off_tm = 2 * p, 2 * p + p * p

    rows = []
    counts = {}

    def tp(j, k):
        return off_tp + j * p + k

    def tm(j, k):
        return off_tm + j * p + k

    for j in np.flatnonzero(sets.tight):
        r = np.zeros(d)
        r[off_p + j] = 1.0
        r[off_m + j] = 1.0
        r[tp(j, 0): tp(j, 0) + p] = -1.0
        r[tm(j, 0): tm(j, 0) + p] = -1.0
        rows.append(r)
    counts["R1"] = len(rows)

    for j in np.flatnonzero(~sets.pos_beta_plus):
        r = np.zeros(d)
        r[off_p + j] = 1.0
        rows.append(r)
    counts["R2"] = len(rows) - sum(counts.values())

    for j in np.flatnonzero(~sets.pos_beta_minus):
        r = np.zeros(d)
        r[off_m + j] = 1.0
        rows.append(r)
    counts["R3"] = len(rows) - sum(counts.values())

    offdiag = ~np.eye(p, dtype=bool)
    for j, k in zip(*np.nonzero(offdiag & ~sets.pos_theta_plus)):
        r = np.zeros(d)
        r[tp(j, k)] = 1.0
        rows.append(r)
    counts["R4"] = len(rows) - sum(counts.values())

    for j, k in zip(*np.nonzero(offdiag & ~sets.pos_theta_minus)):
        r = np.zeros(d)
        r[tm(j, k)] = 1.0
        rows.append(r)
    counts["R5"] = len(rows) - sum(counts.values())

    for j in range(p):
        r = np.zeros(d)
        r[tp(j, j)] = 1.0
        rows.append(r)
    counts["R6"] = p

    for j in range(p):
        r = np.zeros(d)
        r[tm(j, j)] = 1.0
        rows.append(r)
    counts["R7"] = p

    sgn = -1.0 if r8_sign == "symmetric" else 1.0
    for j in range(p):
        for k in range(j + 1, p):
            r = np.zeros(d)
            r[tp(j, k)] = 1.0
            r[tp(k, j)] = sgn
            r[tm(j, k)] = -1.0
            r[tm(k, j)] = -sgn
            rows.append(r)
    counts["R8"] = p * (p - 1) // 2

    x = data.x_std
    z_half = np.zeros((data.n, p * p))
    for c, (j, k) in enumerate(basis.pairs):
        z_half[:, j * p + k] = basis.column(c) / 2.0
    x_tilde = np.hstack([x, -x, z_half, -z_half])

    w = np.concatenate([
        np.full(2 * p, lam),
        np.full(2 * p * p, lam / 2.0),
    ])
    return ConstraintSystem(
        d_inactive=np.asarray(rows).reshape(len(rows), d),
        x_tilde=x_tilde,
        w=w,
        row_counts=counts,
    )


def _null_space(mat: np.ndarray, rel_tol: float = 1e-10) -> np.ndarray:
    """Orthonormal null-space basis via SVD with a relative threshold."""
    if mat.shape[0] == 0:
        return np.eye(mat.shape[1])
    _, s, vt = np.linalg.svd(mat, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int((s > rel_tol * max(smax, 1e-300)).sum())
    return vt[rank:].T


def _rank(mat: np.ndarray, rel_tol: float) -> int:
    if min(mat.shape) == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int((s > rel_tol * s[0]).sum())


def df_estimate(
    state: FitState,
    data: Dataset,
    basis: InteractionBasis,
    lam: float | None = None,
    svd_tol: float = 1e-10,
    r8_sign: str = R8_DEFAULT,
    sets_tol: float = 1e-8,
) -> int:
    """Unbiased degrees-of-freedom estimate rank(X-tilde N) of a strong fit.

    N is an orthonormal basis of the null space of the stacked equality
    and inactive-constraint rows. Requires a converged strong fit with no
    material ridge term (the estimate is derived for the pure problem).
    """
    if state.method != "strong":
        raise ValueError("df_estimate is defined for strong fits only")
    lam = state.lam if lam is None else lam
    if state.eps_ridge > 1e-6 * lam:
        raise ValueError(
            f"df_estimate requires a (near) ridge-free fit; eps_ridge={state.eps_ridge:g}"
        )
    sets = extract_active_sets(state, tol=sets_tol)
    system = build_constraint_system(sets, data, basis, lam, r8_sign=r8_sign)
    null = _null_space(system.d_inactive, svd_tol)
    if null.shape[1] == 0:
        return 0
    return _rank(system.x_tilde @ null, svd_tol)


def df_bound(sets: ActiveSets) -> int:
    """Interpretable upper bound |A_beta| + |A_theta| - |T and (A+ xor A-)|."""
    a_beta = sets.pos_beta_plus | sets.pos_beta_minus
    eff_pos = sets.pos_theta_plus | sets.pos_theta_plus.T
    eff_neg = sets.pos_theta_minus | sets.pos_theta_minus.T
    iu = np.triu_indices(sets.p, k=1)
    a_theta = int((eff_pos | eff_neg)[iu].sum())
    sym_diff = sets.pos_beta_plus ^ sets.pos_beta_minus
    deduction = int((sets.tight & sym_diff).sum())
    return int(a_beta.sum()) + a_theta - deduction


def _df_fit_options() -> tuple[SolveOptions, AdmmOptions]:
    opts = SolveOptions(rel_tol=1e-10, max_iters=20000, eps_ridge_factor=0.0,
                        track_objective=False)
    admm = AdmmOptions(tol_primal=1e-7, tol_dual=1e-7, max_iters=400)
    return opts, admm


def strong_path_fitter(data: Dataset, basis: InteractionBasis, lambdas,
                       r8_sign: str = R8_DEFAULT):
    """Default replicate fitter: strong path, centered fitted values, and
    the per-level df estimate and bound."""
    opts, admm = _df_fit_options()

    def run(y: np.ndarray):
        d = Dataset(
            x_std=data.x_std, y_centered=y - y.mean(), y_mean=float(y.mean()),
            col_means=data.col_means, col_sds=data.col_sds, n=data.n, p=data.p,
            sd_convention=data.sd_convention,
        )
        path = fit_strong_path(d, basis, lambdas, opts=opts, admm_opts=admm)
        fits = np.column_stack([fitted_centered(s, d, basis) for s in path.states])
        est = np.array([
            df_estimate(s, d, basis, r8_sign=r8_sign) for s in path.states
        ])
        bound = np.array([df_bound(extract_active_sets(s)) for s in path.states])
        return fits, est, bound

    return run


def _mc_chunk(args):
    data, basis, mu, sigma, lambdas, seeds, r8_sign = args
    fitter = strong_path_fitter(data, basis, lambdas, r8_sign=r8_sign)
    out = []
    for s in seeds:
        rng = np.random.default_rng(s)
        y = mu + sigma * rng.standard_normal(mu.shape[0])
        fits, est, bound = fitter(y)
        out.append((y, fits, est, bound))
    return out


def df_monte_carlo(
    mu: np.ndarray,
    sigma: float,
    design,
    lambdas,
    B: int,
    seed: int,
    fitter=None,
    workers: int = 1,
):
    """Monte-Carlo estimate of sum_i cov(y_i, yhat_i) / sigma^2 per level.

    Draws y ~ N(mu, sigma^2 I), refits per replicate, and estimates each
    covariance from the sample over replicates. Returns (df, se) arrays.
    ``design`` is a (Dataset, InteractionBasis) pair; ``fitter`` may
    override the refit (it receives y and returns an n x L fitted matrix).
    """
    if B < 100:
        raise ValueError("B must be at least 100")
    data, basis = design
    mu = np.asarray(mu, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float)
    if fitter is None:
        base = strong_path_fitter(data, basis, lambdas)
        fitter = lambda y: base(y)[0]

    seeds = np.random.SeedSequence(seed).generate_state(B, dtype=np.uint64)
    n = mu.shape[0]
    ys = np.empty((B, n))
    fits = np.empty((B, n, lambdas.size))
    for b in range(B):
        rng = np.random.default_rng(int(seeds[b]))
        y = mu + sigma * rng.standard_normal(n)
        ys[b] = y
        fits[b] = np.asarray(fitter(y)).reshape(n, lambdas.size)
    return _df_from_draws(ys, fits, sigma)


def _df_from_draws(ys: np.ndarray, fits: np.ndarray, sigma: float):
    B = ys.shape[0]
    yc = ys - ys.mean(axis=0)
    fc = fits - fits.mean(axis=0)
    # per-replicate contribution to the covariance sum, per level
    h = np.einsum("bn,bnl->bl", yc, fc) / sigma ** 2
    df = h.sum(axis=0) / (B - 1)
    se = h.std(axis=0, ddof=1) / np.sqrt(B - 1)
    return df, se


@dataclass
class DfStudy:
    lambdas: np.ndarray
    mc_df: np.ndarray
    mc_se: np.ndarray
    est_mean: np.ndarray
    est_se: np.ndarray
    bound_mean: np.ndarray
    bound_violations: int   # count of replicate/level cells with est > bound


def df_study(
    data: Dataset,
    basis: InteractionBasis,
    mu: np.ndarray,
    sigma: float,
    lambdas,
    B: int,
    seed: int,
    workers: int = 1,
    r8_sign: str = R8_DEFAULT,
) -> DfStudy:
    """Paired Monte-Carlo evaluation of the df estimate against the
    covariance definition, on one fixed design."""
    if B < 100:
        raise ValueError("B must be at least 100")
    lambdas = np.asarray(lambdas, dtype=float)
    mu = np.asarray(mu, dtype=float)
    n = mu.shape[0]
    seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(B, dtype=np.uint64)]

    chunks = []
    step = max(1, B // max(workers * 4, 1))
    for i in range(0, B, step):
        chunks.append((data, basis, mu, sigma, lambdas, seeds[i:i + step], r8_sign))

    results = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_mc_chunk, chunks):
                results.extend(part)
    else:
        for ch in chunks:
            results.extend(_mc_chunk(ch))

    ys = np.stack([r[0] for r in results])
    fits = np.stack([r[1] for r in results])
    est = np.stack([r[2] for r in results]).astype(float)
    bound = np.stack([r[3] for r in results]).astype(float)

    mc_df, mc_se = _df_from_draws(ys, fits, sigma)
    return DfStudy(
        lambdas=lambdas,
        mc_df=mc_df,
        mc_se=mc_se,
        est_mean=est.mean(axis=0),
        est_se=est.std(axis=0, ddof=1) / np.sqrt(B),
        bound_mean=bound.mean(axis=0),
        bound_violations=int((est > bound + 0.5).sum()),
    )
