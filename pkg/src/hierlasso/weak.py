"""Generalized gradient descent for the weakly hierarchical problem.

Each sweep takes a gradient step on the smooth part (data fit, the linear
penalty on beta+/-, and the tiny ridge), then applies the exact per-row
prox which enforces ||theta_j||_1 <= beta+_j + beta-_j and the sign
constraints. All p rows update from the same frozen residual, so a sweep
is a Jacobi update and the row prox calls are independent. Acceleration
uses momentum with restart on objective increase, which keeps the
recorded objective sequence nonincreasing. The same machinery drives the
strong solver through an augmented Gaussian loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model import Dataset, FitState, InteractionBasis, vec_to_theta
from .prox import solve_rows


@dataclass
class SolveOptions:
    max_iters: int = 5000
    rel_tol: float = 1e-7
    eps_ridge_factor: float = 1e-8   # ridge strength as a fraction of lambda
    acceleration: bool = True
    backtracking_shrink: float = 0.5
    track_objective: bool = True
    t_init: float | None = None

    def __post_init__(self):
        if self.max_iters <= 0 or self.rel_tol <= 0 or self.rel_tol >= 1:
            raise ValueError("max_iters must be positive and 0 < rel_tol < 1")
        if not 0 < self.backtracking_shrink < 1:
            raise ValueError("backtracking_shrink must lie in (0, 1)")
        if self.eps_ridge_factor < 0:
            raise ValueError("eps_ridge_factor must be nonnegative")


class GaussianLoss:
    """Quadratic data fit on the centered response."""

    kind = "gaussian"
    needs_intercept = False

    def __init__(self, data: Dataset, basis: InteractionBasis):
        self.x = data.x_std
        self.basis = basis
        self.y = data.y_centered
        self.p = data.p

    def linear_predictor(self, beta, theta_rows, beta0=0.0):
        eta = self.x @ beta
        if self.basis.n_cols:
            eta = eta + self.basis.interaction_component_vec(theta_rows.ravel())
        return eta + beta0 if beta0 else eta

    def eval(self, beta, theta_rows, beta0=0.0):
        """(data-fit value, residual) from one predictor pass."""
        r = self.y - self.linear_predictor(beta, theta_rows, beta0)
        return float(0.5 * r @ r), r

    def value(self, beta, theta_rows, beta0=0.0) -> float:
        return self.eval(beta, theta_rows, beta0)[0]

    def residual(self, beta, theta_rows, beta0=0.0):
        return self.eval(beta, theta_rows, beta0)[1]

    def zt_rows(self, r):
        if self.basis.n_cols == 0:
            return np.zeros((self.p, 0))
        return self.basis.zt(r).reshape(self.p, self.p - 1)

    def theta_extra_grad(self, theta_rows):
        return None

    def update_intercept(self, beta, theta_rows, beta0):
        return 0.0

    def lipschitz_scale(self) -> float:
        return 1.0

    def lipschitz_shift(self) -> float:
        return 0.0


class LogisticLoss(GaussianLoss):
    """Binomial negative log-likelihood with an unpenalized intercept.

    The response must be exactly 0/1. The intercept is refreshed by a
    damped Newton step at the start of every sweep.
    """

    kind = "logistic"
    needs_intercept = True

    def __init__(self, data: Dataset, basis: InteractionBasis):
        super().__init__(data, basis)
        y = data.y_centered + data.y_mean
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise ValueError("logistic loss requires a 0/1 response")
        self.y = y

    def eval(self, beta, theta_rows, beta0):
        eta = self.linear_predictor(beta, theta_rows, beta0)
        val = float(np.logaddexp(0.0, eta).sum() - self.y @ eta)
        return val, self.y - 1.0 / (1.0 + np.exp(-eta))

    def update_intercept(self, beta, theta_rows, beta0):
        eta = self.linear_predictor(beta, theta_rows, beta0)
        prob = 1.0 / (1.0 + np.exp(-eta))
        w = prob * (1.0 - prob)
        step = (self.y - prob).sum() / max(w.sum(), 1e-10)
        return beta0 + float(np.clip(step, -4.0, 4.0))

    def lipschitz_scale(self) -> float:
        return 0.25


class AugmentedGaussianLoss(GaussianLoss):
    """Gaussian loss plus the consensus term (rho/2)||Theta - Omega + U/rho||_F^2.

    First block of the strong solver's splitting; the extra term only
    touches the theta gradient and the curvature bound.
    """

    kind = "augmented_gaussian"

    def __init__(self, data, basis, rho: float, omega: np.ndarray, u: np.ndarray):
        super().__init__(data, basis)
        self.rho = rho
        from .model import offdiag_mask

        mask = offdiag_mask(self.p)
        self.omega_rows = omega[mask].reshape(self.p, max(self.p - 1, 0))
        self.u_rows = u[mask].reshape(self.p, max(self.p - 1, 0))

    def eval(self, beta, theta_rows, beta0=0.0):
        val, r = super().eval(beta, theta_rows)
        dev = theta_rows - self.omega_rows + self.u_rows / self.rho
        return val + float(0.5 * self.rho * (dev ** 2).sum()), r

    def theta_extra_grad(self, theta_rows):
        return self.rho * (theta_rows - self.omega_rows) + self.u_rows

    def lipschitz_shift(self) -> float:
        return self.rho


def make_loss(kind, data: Dataset, basis: InteractionBasis):
    if not isinstance(kind, str):
        return kind
    if kind == "gaussian":
        return GaussianLoss(data, basis)
    if kind == "logistic":
        return LogisticLoss(data, basis)
    raise ValueError(f"unknown loss {kind!r}")


def estimate_step(data: Dataset, basis: InteractionBasis, loss=None) -> float:
    """Initial step size 1 / L from a power-iteration curvature estimate.

    L is the top eigenvalue of A'A for A = (X : Z/2) (30 iterations),
    scaled by the loss curvature bound (1 Gaussian, 1/4 logistic) and
    shifted by any consensus penalty. Backtracking absorbs the slack.
    """
    p = data.p
    d = p + basis.n_cols
    v = np.ones(d) / np.sqrt(d)
    lam_est = 1.0
    for _ in range(30):
        theta = vec_to_theta(v[p:], p)
        u = data.x_std @ v[:p] + basis.interaction_component(theta)
        w = np.concatenate([data.x_std.T @ u, basis.zt(u) / 2.0])
        lam_est = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            break
        v = w / nrm
    scale = loss.lipschitz_scale() if loss is not None else 1.0
    shift = loss.lipschitz_shift() if loss is not None else 0.0
    return 1.0 / max(scale * lam_est + shift, 1e-12)


def lambda_max(data: Dataset, basis: InteractionBasis) -> float:
    """Smallest penalty at which the all-zero fit is expected optimal."""
    top = float(np.abs(data.x_std.T @ data.y_centered).max(initial=0.0))
    if basis.n_cols:
        top = max(top, 0.5 * float(np.abs(basis.zt(data.y_centered)).max()))
    return top


def default_lambda_grid(
    data: Dataset, basis: InteractionBasis, nlambda: int = 50,
    min_ratio: float = 0.01,
) -> np.ndarray:
    lmax = lambda_max(data, basis)
    if lmax <= 0:
        lmax = 1.0
    return np.geomspace(lmax, lmax * min_ratio, nlambda)


def _penalty_smooth(lam, eps, bp, bm, theta_rows) -> float:
    """Smooth penalty terms: the linear beta penalty plus the ridge."""
    val = lam * (bp.sum() + bm.sum())
    val += 0.5 * eps * ((theta_rows ** 2).sum() + bp @ bp + bm @ bm)
    return float(val)


def _objective(loss, lam, eps, beta0, bp, bm, theta_rows) -> float:
    q = loss.value(bp - bm, theta_rows, beta0)
    return q + _penalty_smooth(lam, eps, bp, bm, theta_rows) \
        + float(0.5 * lam * np.abs(theta_rows).sum())


def _smooth_value(loss, lam, eps, beta0, bp, bm, theta_rows) -> float:
    q = loss.value(bp - bm, theta_rows, beta0)
    return q + _penalty_smooth(lam, eps, bp, bm, theta_rows)


def fit_weak(
    data: Dataset,
    basis: InteractionBasis,
    lam: float,
    loss="gaussian",
    opts: SolveOptions | None = None,
    warm_start: FitState | None = None,
) -> FitState:
    """Solve the weakly hierarchical problem at one penalty level.

    Returns a feasible FitState whose recorded objectives never increase.
    Raises RuntimeError if the loss stays non-finite after repeated step
    shrinking.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    opts = opts or SolveOptions()
    loss = make_loss(loss, data, basis)
    p = data.p
    eps = opts.eps_ridge_factor * lam
    mask = ~np.eye(p, dtype=bool)

    if warm_start is not None:
        bp = warm_start.beta_plus.copy()
        bm = warm_start.beta_minus.copy()
        th = warm_start.theta[mask].reshape(p, p - 1).copy()
        beta0 = warm_start.beta0 if loss.needs_intercept else 0.0
    else:
        bp = np.zeros(p)
        bm = np.zeros(p)
        th = np.zeros((p, max(p - 1, 0)))
        if loss.needs_intercept:
            ybar = float(np.clip(loss.y.mean(), 1e-10, 1 - 1e-10))
            beta0 = float(np.log(ybar / (1.0 - ybar)))
        else:
            beta0 = 0.0

    t = opts.t_init if opts.t_init is not None else estimate_step(data, basis, loss)
    obj = _objective(loss, lam, eps, beta0, bp, bm, th)
    history = [obj]

    bp_prev, bm_prev, th_prev = bp, bm, th
    tk = 1.0
    row_alpha = np.zeros(p)
    converged = False
    it = 0

    for it in range(1, opts.max_iters + 1):
        if loss.needs_intercept:
            beta0 = loss.update_intercept(bp - bm, th, beta0)

        if opts.acceleration and it > 1:
            tk_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
            mom = (tk - 1.0) / tk_next
            v_bp = bp + mom * (bp - bp_prev)
            v_bm = bm + mom * (bm - bm_prev)
            v_th = th + mom * (th - th_prev)
            tk = tk_next
        else:
            tk = 1.0
            v_bp, v_bm, v_th = bp, bm, th

        accepted = None
        for attempt in range(2):
            # attempt 0 steps from the momentum point; attempt 1 restarts
            # from the current iterate, which backtracking guarantees can
            # not increase the objective.
            if attempt == 1:
                v_bp, v_bm, v_th = bp, bm, th
                tk = 1.0
            q_v, r = loss.eval(v_bp - v_bm, v_th, beta0)
            g_v = q_v + _penalty_smooth(lam, eps, v_bp, v_bm, v_th)
            xtr = loss.x.T @ r
            ztr = loss.zt_rows(r)
            extra = loss.theta_extra_grad(v_th)

            while True:
                delta = 1.0 - t * eps
                bp_t = delta * v_bp + t * xtr - t * lam
                bm_t = delta * v_bm - t * xtr - t * lam
                th_t = delta * v_th + 0.5 * t * ztr
                if extra is not None:
                    th_t = th_t - t * extra
                nbp, nbm, nth, row_alpha = solve_rows(bp_t, bm_t, th_t, lam, t)

                q_new, _ = loss.eval(nbp - nbm, nth, beta0)
                g_new = q_new + _penalty_smooth(lam, eps, nbp, nbm, nth)
                if np.isfinite(g_new):
                    d_bp, d_bm, d_th = nbp - v_bp, nbm - v_bm, nth - v_th
                    lin = (-xtr + lam + eps * v_bp) @ d_bp
                    lin += (xtr + lam + eps * v_bm) @ d_bm
                    g_th = -0.5 * ztr + eps * v_th
                    if extra is not None:
                        g_th = g_th + extra
                    lin += (g_th * d_th).sum()
                    quad = (d_bp @ d_bp + d_bm @ d_bm + (d_th ** 2).sum()) / (2.0 * t)
                    if g_new <= g_v + lin + quad + 1e-12 * max(1.0, abs(g_v)):
                        break
                t *= opts.backtracking_shrink
                if t < 1e-18:
                    raise RuntimeError("step size collapsed without a finite descent step")

            new_obj = g_new + float(0.5 * lam * np.abs(nth).sum())
            if new_obj <= obj + 1e-12 * max(1.0, abs(obj)):
                accepted = (nbp, nbm, nth, new_obj)
                break

        if accepted is None:
            converged = True  # numerical stagnation at the optimum
            break

        bp_prev, bm_prev, th_prev = bp, bm, th
        bp, bm, th, new_obj = accepted
        drop = obj - new_obj
        obj = min(new_obj, obj)
        if opts.track_objective:
            history.append(obj)
        if drop <= opts.rel_tol * max(1.0, abs(obj)):
            converged = True
            break

    return FitState(
        beta0=float(beta0) if loss.needs_intercept else data.y_mean,
        beta_plus=bp,
        beta_minus=bm,
        theta=vec_to_theta(th.ravel(), p),
        lam=float(lam),
        eps_ridge=eps,
        iterations=it,
        converged=converged,
        objective=obj,
        method="weak",
        loss=loss.kind,
        alpha_row=row_alpha,
        objective_history=history if opts.track_objective else [],
    )


@dataclass
class PathResult:
    """Fits along a decreasing penalty sequence with per-level metrics."""

    lambdas: np.ndarray
    states: list[FitState]
    objectives: np.ndarray
    parameter_sparsity: np.ndarray
    practical_sparsity: np.ndarray
    extras: dict = field(default_factory=dict)


def fit_weak_path(
    data: Dataset,
    basis: InteractionBasis,
    lambdas,
    loss="gaussian",
    opts: SolveOptions | None = None,
) -> PathResult:
    """Warm-started fits along a strictly decreasing penalty grid."""
    from .model import sparsity_metrics

    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.size == 0 or np.any(np.diff(lambdas) >= 0):
        raise ValueError("lambdas must be strictly descending")
    opts = opts or SolveOptions()
    if opts.t_init is None:
        loss_obj = make_loss(loss, data, basis)
        opts = replace(opts, t_init=estimate_step(data, basis, loss_obj))
        loss = loss_obj
    states = []
    warm = None
    for i, lam in enumerate(lambdas):
        try:
            warm = fit_weak(data, basis, float(lam), loss=loss, opts=opts, warm_start=warm)
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
