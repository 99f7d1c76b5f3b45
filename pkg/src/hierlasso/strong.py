"""ADMM splitting for the strongly hierarchical problem.

The symmetry constraint couples all rows, so the problem is split into a
weakly hierarchical block (handled by the weak solver with an augmented
Gaussian loss) and a symmetric consensus copy Omega. The dual matrix U is
kept unscaled: the Omega update is the projection of Theta + U/rho onto
symmetric matrices, and U accumulates rho times the consensus gap.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import Dataset, FitState, InteractionBasis, objective_strong
from .weak import AugmentedGaussianLoss, PathResult, SolveOptions, estimate_step, fit_weak


@dataclass
class AdmmState:
    omega: np.ndarray
    u: np.ndarray
    rho: float
    primal_residual: float
    dual_residual: float


@dataclass
class AdmmOptions:
    rho: float = 1.0
    max_iters: int = 500
    tol_primal: float = 1e-5
    tol_dual: float = 1e-5
    adapt_rho: bool = True
    inner_max_iters: int = 2000
    inner_rel_tol_start: float = 1e-4

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")


def admm_residuals(theta, omega, omega_prev, rho) -> tuple[float, float]:
    """Consensus gap ||Theta - Omega||_F and dual change rho ||Omega - Omega_prev||_F."""
    if theta.shape != omega.shape or omega.shape != omega_prev.shape:
        raise ValueError("shape mismatch in admm_residuals")
    primal = float(np.linalg.norm(theta - omega))
    dual = float(rho * np.linalg.norm(omega - omega_prev))
    return primal, dual


def _clean_omega(omega: np.ndarray, theta_inner: np.ndarray) -> np.ndarray:
    """Exact-zero extraction: the inner prox produces exact zeros, and at
    the consensus fixed point Omega shares its support. Entries where both
    ordered copies are exactly zero are consensus dust."""
    out = omega.copy()
    dead = (theta_inner == 0.0) & (theta_inner.T == 0.0)
    out[dead] = 0.0
    np.fill_diagonal(out, 0.0)
    return out


def fit_strong(
    data: Dataset,
    basis: InteractionBasis,
    lam: float,
    opts: SolveOptions | None = None,
    admm_opts: AdmmOptions | None = None,
    warm_start: FitState | None = None,
) -> FitState:
    """Solve the strongly hierarchical problem at one penalty level.

    Returns a FitState whose theta is exactly symmetric (the consensus
    copy). If ADMM does not converge within its iteration budget the best
    iterate is returned flagged converged=False.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    opts = opts or SolveOptions()
    admm_opts = admm_opts or AdmmOptions()
    p = data.p

    rho = admm_opts.rho
    if warm_start is not None and getattr(warm_start, "admm", None) is not None:
        omega = warm_start.admm.omega.copy()
        u = warm_start.admm.u.copy()
        rho = warm_start.admm.rho
        inner = replace_theta(warm_start)
    else:
        omega = np.zeros((p, p))
        u = np.zeros((p, p))
        inner = warm_start

    # curvature of the unaugmented block, reused across all inner solves
    base_curv = 1.0 / estimate_step(data, basis)

    inner_tol = max(admm_opts.inner_rel_tol_start, opts.rel_tol)
    primal = dual = np.inf
    admm_converged = False
    it = 0
    for it in range(1, admm_opts.max_iters + 1):
        loss = AugmentedGaussianLoss(data, basis, rho, omega, u)
        inner_opts = replace(
            opts,
            rel_tol=inner_tol,
            max_iters=admm_opts.inner_max_iters,
            track_objective=False,
            t_init=1.0 / (base_curv + rho),
        )
        inner = fit_weak(data, basis, lam, loss=loss, opts=inner_opts, warm_start=inner)
        theta = inner.theta

        omega_prev = omega
        omega = 0.5 * (theta + theta.T) + (u + u.T) / (2.0 * rho)
        np.fill_diagonal(omega, 0.0)
        u = u + rho * (theta - omega)

        primal, dual = admm_residuals(theta, omega, omega_prev, rho)
        theta_scale = 1.0 + float(np.linalg.norm(theta))
        u_scale = 1.0 + float(np.linalg.norm(u))
        if primal <= admm_opts.tol_primal * theta_scale and dual <= admm_opts.tol_dual * u_scale:
            admm_converged = True
            break

        if admm_opts.adapt_rho:
            rel_p = primal / theta_scale
            rel_d = dual / u_scale
            if rel_p > 10.0 * rel_d:
                rho = min(rho * 2.0, 1e8)
            elif rel_d > 10.0 * rel_p:
                rho = max(rho / 2.0, 1e-6)
        # tighten the inner solves as the consensus gap closes
        inner_tol = max(opts.rel_tol, min(inner_tol, 0.05 * primal / theta_scale))

    # Final block solve at full tolerance against the settled consensus.
    loss = AugmentedGaussianLoss(data, basis, rho, omega, u)
    inner = fit_weak(
        data, basis, lam, loss=loss,
        opts=replace(opts, track_objective=False, t_init=1.0 / (base_curv + rho)),
        warm_start=inner,
    )
    theta = inner.theta
    omega_ret = 0.5 * (theta + theta.T) + (u + u.T) / (2.0 * rho)
    np.fill_diagonal(omega_ret, 0.0)
    omega_ret = _clean_omega(omega_ret, theta)
    primal = float(np.linalg.norm(theta - omega_ret))

    state = FitState(
        beta0=data.y_mean,
        beta_plus=inner.beta_plus,
        beta_minus=inner.beta_minus,
        theta=omega_ret,
        lam=float(lam),
        eps_ridge=inner.eps_ridge,
        iterations=it,
        converged=bool(admm_converged and inner.converged),
        objective=0.0,
        method="strong",
        loss="gaussian",
        alpha_row=inner.alpha_row,
        theta_inner=theta,
    )
    state.objective = objective_strong(state, data, basis)
    state.admm = AdmmState(
        omega=omega_ret, u=u, rho=rho, primal_residual=primal, dual_residual=dual
    )
    return state


def replace_theta(state: FitState) -> FitState:
    """Warm-start view of a strong fit using its inner (feasible) theta."""
    if state.theta_inner is None:
        return state
    return FitState(
        beta0=state.beta0,
        beta_plus=state.beta_plus,
        beta_minus=state.beta_minus,
        theta=state.theta_inner,
        lam=state.lam,
        eps_ridge=state.eps_ridge,
        iterations=state.iterations,
        converged=state.converged,
        objective=state.objective,
        method=state.method,
        loss=state.loss,
    )


def fit_strong_path(
    data: Dataset,
    basis: InteractionBasis,
    lambdas,
    opts: SolveOptions | None = None,
    admm_opts: AdmmOptions | None = None,
) -> PathResult:
    """Warm-started strong fits along a strictly decreasing penalty grid.

    Warm starts carry (beta+-, Theta, Omega, U, rho) between levels.
    """
    from .model import sparsity_metrics

    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.size == 0 or np.any(np.diff(lambdas) >= 0):
        raise ValueError("lambdas must be strictly descending")
    states = []
    warm = None
    for i, lam in enumerate(lambdas):
        try:
            warm = fit_strong(
                data, basis, float(lam), opts=opts, admm_opts=admm_opts, warm_start=warm
            )
        except Exception as exc:
            raise RuntimeError(f"path fit failed at lambda index {i} ({lam:.6g})") from exc
        states.append(warm)
    spars = [sparsity_metrics(s) for s in states]
    return PathResult(
        lambdas=lambdas,
        states=states,
        objectives=np.array([s.objective for s in states]),
        parameter_sparsity=np.array([s[0] for s in spars]),
        practical_sparsity=np.array([s[1] for s in spars]),
    )
