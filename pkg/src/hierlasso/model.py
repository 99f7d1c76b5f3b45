"""Domain types and shared pure operations.

Everything here is a pure function of immutable inputs: objective
evaluation, soft-thresholding, the KKT certificate checker, effective
interactions, and sparsity metrics. Solvers live in ``weak`` / ``strong``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

# A coefficient counts as nonzero iff |value| > ZERO_REL * max(1, block sup norm).
ZERO_REL = 1e-8


def soft_threshold(c, lam):
    """Soft-thresholding operator sign(c) * max(|c| - lam, 0).

    Works elementwise on arrays; ``lam`` must be nonnegative.
    """
    if np.any(np.asarray(lam) < 0):
        raise ValueError("soft_threshold requires lam >= 0")
    return np.sign(c) * np.maximum(np.abs(c) - lam, 0.0)


@dataclass
class Dataset:
    """Standardized design plus the metadata needed to undo it.

    Columns of ``x_std`` have mean 0 and standard deviation 1;
    ``y_centered`` has mean 0. ``col_means`` / ``col_sds`` / ``y_mean``
    let predictions be made on raw-scale inputs.
    """

    x_std: np.ndarray
    y_centered: np.ndarray
    y_mean: float
    col_means: np.ndarray
    col_sds: np.ndarray
    n: int
    p: int
    sd_convention: str = "population"
    column_names: list[str] | None = None

    def x_raw(self) -> np.ndarray:
        """Reconstruct the raw-scale design."""
        return self.x_std * self.col_sds + self.col_means

    def y_raw(self) -> np.ndarray:
        return self.y_centered + self.y_mean


@dataclass
class InteractionBasis:
    """Centered ordered-pair product columns.

    Column ``j * (p - 1) + rank_of_k`` holds the centered elementwise
    product ``x_j * x_k`` (k != j), so each row block j occupies a
    contiguous slice and the (j, k) and (k, j) columns are identical
    vectors.
    """

    z: np.ndarray | None
    pairs: np.ndarray          # (p*(p-1), 2) ordered (j, k)
    z_means: np.ndarray        # pre-centering column means
    col_sq_norms: np.ndarray   # post-centering squared column norms
    p: int
    n: int
    _x_std: np.ndarray | None = None  # retained only when z is not materialized

    def column(self, c: int) -> np.ndarray:
        if self.z is not None:
            return self.z[:, c]
        j, k = self.pairs[c]
        return self._x_std[:, j] * self._x_std[:, k] - self.z_means[c]

    def col_index(self, j: int, k: int) -> int:
        """Column id of ordered pair (j, k), j != k."""
        if j == k:
            raise ValueError("no diagonal interaction columns")
        return j * (self.p - 1) + (k if k < j else k - 1)

    @property
    def n_cols(self) -> int:
        return self.p * (self.p - 1)

    def materialized(self) -> np.ndarray:
        """Dense Z, building it on the fly if it was kept lazy."""
        if self.z is not None:
            return self.z
        out = np.empty((self.n, self.n_cols))
        for c in range(self.n_cols):
            out[:, c] = self.column(c)
        return out

    def _mean_matrix(self) -> np.ndarray:
        m = np.zeros((self.p, self.p))
        m[self.pairs[:, 0], self.pairs[:, 1]] = self.z_means
        return m

    def interaction_component(self, theta: np.ndarray) -> np.ndarray:
        """Fitted contribution Z vec(theta) / 2 without forming Z when lazy.

        Uses sum_{j != k} theta_jk (x_j * x_k) / 2 = row-wise quadratic form
        of theta in x, minus the centering correction.
        """
        if self.n_cols == 0:
            return np.zeros(self.n)
        if self.z is not None:
            return self.z @ theta_to_vec(theta) / 2.0
        x = self._x_std
        th = theta.copy()
        np.fill_diagonal(th, 0.0)
        quad = 0.5 * ((x @ th) * x).sum(axis=1)
        return quad - 0.5 * float((th * self._mean_matrix()).sum())

    def interaction_component_vec(self, vec: np.ndarray) -> np.ndarray:
        """Same as :meth:`interaction_component` but from the flat vector."""
        if self.n_cols == 0:
            return np.zeros(self.n)
        if self.z is not None:
            return self.z @ vec / 2.0
        return self.interaction_component(vec_to_theta(vec, self.p))

    def zt(self, r: np.ndarray) -> np.ndarray:
        """Z' r in basis column order, without forming Z when lazy."""
        if self.n_cols == 0:
            return np.zeros(0)
        if self.z is not None:
            return self.z.T @ r
        x = self._x_std
        g = x.T @ (x * r[:, None])
        mask = ~np.eye(self.p, dtype=bool)
        return g[mask] - float(r.sum()) * self.z_means


@lru_cache(maxsize=128)
def offdiag_mask(p: int) -> np.ndarray:
    """Cached off-diagonal boolean mask; treat as read-only."""
    mask = ~np.eye(p, dtype=bool)
    mask.setflags(write=False)
    return mask


def theta_to_vec(theta: np.ndarray) -> np.ndarray:
    """Flatten the off-diagonal of a p x p matrix in basis column order."""
    return theta[offdiag_mask(theta.shape[0])]


def vec_to_theta(vec: np.ndarray, p: int) -> np.ndarray:
    theta = np.zeros((p, p))
    theta[offdiag_mask(p)] = vec
    return theta


@dataclass
class FitState:
    """Solution of one weak or strong fit at a single penalty level."""

    beta0: float
    beta_plus: np.ndarray
    beta_minus: np.ndarray
    theta: np.ndarray          # p x p, zero diagonal; symmetric for strong fits
    lam: float
    eps_ridge: float
    iterations: int
    converged: bool
    objective: float
    method: str = "weak"       # "weak" | "strong"
    loss: str = "gaussian"
    # Diagnostics. ``alpha_row`` holds the per-row prox duals from the final
    # sweep; ``theta_inner`` is the pre-symmetrization matrix of a strong fit
    # (it satisfies the hierarchy constraints exactly, unlike the returned
    # symmetrized theta which carries the consensus residual).
    alpha_row: np.ndarray | None = None
    theta_inner: np.ndarray | None = None
    objective_history: list = field(default_factory=list)
    kkt_violation: float | None = None
    admm: object = None  # AdmmState of a strong fit, used for warm starts

    @property
    def beta(self) -> np.ndarray:
        return self.beta_plus - self.beta_minus

    @property
    def p(self) -> int:
        return self.beta_plus.shape[0]


@dataclass
class KktReport:
    """Outcome of certifying a fit against its optimality conditions."""

    alpha_hat: np.ndarray
    max_stationarity_violation: float
    max_complementary_slackness_violation: float
    pass_: bool
    # Weak-mode dual recovery for all-zero rows is a constructive guess; when
    # the certificate fails only through such rows the result is ambiguous.
    inconclusive: bool = False


def _check_dims(state: FitState, data: Dataset, basis: InteractionBasis):
    if state.p != data.p or basis.p != data.p:
        raise ValueError(
            f"dimension mismatch: state p={state.p}, data p={data.p}, basis p={basis.p}"
        )
    if data.x_std.shape[0] != data.n or basis.n != data.n:
        raise ValueError("dimension mismatch between data and basis")


def fitted_centered(state: FitState, data: Dataset, basis: InteractionBasis) -> np.ndarray:
    """Centered-model fitted values X beta + Z vec(theta) / 2."""
    _check_dims(state, data, basis)
    return data.x_std @ state.beta + basis.interaction_component(state.theta)


def objective_weak(state: FitState, data: Dataset, basis: InteractionBasis) -> float:
    """Penalized objective of the weakly hierarchical problem.

    0.5 ||y - X b - Z vec(T)/2||^2 + lam 1'(b+ + b-) + (lam/2)||T||_1
    + (eps/2)(||T||_F^2 + ||b+||^2 + ||b-||^2), on the centered response.
    Feasibility of ``state`` is not checked.
    """
    _check_dims(state, data, basis)
    r = data.y_centered - fitted_centered(state, data, basis)
    lam, eps = state.lam, state.eps_ridge
    theta_l1 = np.abs(state.theta).sum()
    value = 0.5 * r @ r
    value += lam * (state.beta_plus.sum() + state.beta_minus.sum())
    value += 0.5 * lam * theta_l1
    value += 0.5 * eps * (
        (state.theta ** 2).sum()
        + state.beta_plus @ state.beta_plus
        + state.beta_minus @ state.beta_minus
    )
    return float(value)


def objective_strong(state: FitState, data: Dataset, basis: InteractionBasis) -> float:
    """Same formula as :func:`objective_weak`; the strong problem differs
    only in the symmetry constraint, not in the objective."""
    return objective_weak(state, data, basis)


def penalty_reformulation_value(beta: np.ndarray, theta: np.ndarray, lam: float) -> float:
    """Penalty written as lam * sum_j max(|b_j|, ||T_j||_1) + (lam/2)||T||_1."""
    if np.any(np.diag(theta) != 0):
        raise ValueError("theta must have a zero diagonal")
    row_l1 = np.abs(theta).sum(axis=1)
    return float(lam * np.maximum(np.abs(beta), row_l1).sum() + 0.5 * lam * np.abs(theta).sum())


def effective_interactions(state: FitState) -> np.ndarray:
    """Symmetrized interaction coefficients (theta + theta') / 2."""
    return 0.5 * (state.theta + state.theta.T)


def nonzero_threshold(block: np.ndarray, zero_tol: float = ZERO_REL) -> float:
    """Absolute cutoff below which a coefficient counts as zero."""
    if block.size == 0:
        return zero_tol
    return zero_tol * max(1.0, float(np.abs(block).max()))


def sparsity_metrics(state: FitState, zero_tol: float = ZERO_REL) -> tuple[int, int]:
    """(parameter sparsity, practical sparsity) of a fit.

    Parameter sparsity counts nonzero mains plus nonzero unordered
    effective interactions. Practical sparsity counts the distinct raw
    variables needed to evaluate the model.
    """
    beta = state.beta
    eff = effective_interactions(state)
    thr_b = nonzero_threshold(beta, zero_tol)
    thr_t = nonzero_threshold(eff, zero_tol)
    main_nz = np.abs(beta) > thr_b
    inter_nz = np.abs(eff) > thr_t
    iu = np.triu_indices(state.p, k=1)
    n_inter = int(inter_nz[iu].sum())
    parameter = int(main_nz.sum()) + n_inter
    measured = main_nz | inter_nz.any(axis=1)
    return parameter, int(measured.sum())


def _kkt_rescale(data: Dataset, basis: InteractionBasis):
    """Scale (y, X, Z) by 1 / ||x_1|| so main columns have unit norm.

    Standardization gives every main column the identical norm, so one
    uniform scaling of the data turns the fitted problem into an
    equivalent one with unit-norm mains, penalty lam / ||x||^2, and the
    same coefficients.
    """
    col_norms = np.linalg.norm(data.x_std, axis=0)
    s = float(col_norms[0])
    if not np.allclose(col_norms, s, rtol=1e-8):
        raise ValueError("main columns do not share a common norm; standardize first")
    return s


def kkt_check(
    state: FitState,
    data: Dataset,
    basis: InteractionBasis,
    mode: str,
    tol: float = 1e-4,
) -> KktReport:
    """Certify a converged fit against its stationarity conditions.

    Recovers the hierarchy-constraint duals alpha_j, then verifies the
    soft-threshold equations for mains and interactions and the
    complementary slackness products. Violations are reported in
    coefficient units. Raises on a non-converged state.
    """
    if mode not in ("strong", "weak"):
        raise ValueError(f"mode must be 'strong' or 'weak', got {mode!r}")
    if not state.converged:
        raise ValueError(
            "kkt_check requires a converged fit "
            f"(iterations={state.iterations}, objective={state.objective:.6g})"
        )
    _check_dims(state, data, basis)
    p = state.p
    s = _kkt_rescale(data, basis)
    lam_s = state.lam / s ** 2

    beta = state.beta
    theta = state.theta
    eff = effective_interactions(state)
    row_l1 = np.abs(theta).sum(axis=1)
    bsum = state.beta_plus + state.beta_minus

    x_s = data.x_std / s
    resid = (data.y_centered - fitted_centered(state, data, basis)) / s

    # x_j' r^(-j) with unit-norm scaled columns.
    xtr = x_s.T @ resid
    xtr_partial = xtr + beta

    thr_b = nonzero_threshold(beta)
    slack = bsum - row_l1
    slack_tol = 1e-7 * max(1.0, float(bsum.max(initial=0.0)))

    alpha = np.zeros(p)
    determined = np.zeros(p, dtype=bool)
    for j in range(p):
        if slack[j] > slack_tol:
            alpha[j] = 0.0
            determined[j] = True
        elif abs(beta[j]) > thr_b:
            alpha[j] = lam_s - np.sign(beta[j]) * (xtr_partial[j] - beta[j])
            determined[j] = True

    # Interaction quantities in the scaled problem, vectorized over pairs.
    iu, ik = np.triu_indices(p, k=1)
    cols = np.array(
        [basis.col_index(j, k) for j, k in zip(iu, ik)], dtype=int
    ).reshape(-1)
    ztr = basis.zt(resid)[cols] / s if cols.size else np.zeros(0)
    znorm2 = basis.col_sq_norms[cols] / s ** 2 if cols.size else np.ones(0)
    tau = eff[iu, ik]
    ztr_partial = ztr + znorm2 * tau

    # Minimal duals for rows where the main-effect equation pins nothing
    # down (all-zero rows with a tight 0 <= 0 constraint).
    upper = np.maximum(lam_s - np.abs(xtr_partial), 0.0)
    if not determined.all():
        need = np.zeros(p)
        for c, (j, k) in enumerate(zip(iu, ik)):
            gap = abs(ztr_partial[c]) - lam_s
            if gap <= 0:
                continue
            if mode == "weak":
                req = gap / 2.0
            else:
                req = gap
            if not determined[j]:
                base = alpha[k] if determined[k] and mode == "strong" else 0.0
                need[j] = max(need[j], req - base)
            if not determined[k]:
                base = alpha[j] if determined[j] and mode == "strong" else 0.0
                need[k] = max(need[k], req - base)
        free = ~determined
        alpha[free] = np.clip(need[free], 0.0, upper[free])

    viol = np.abs(beta - soft_threshold(xtr_partial, np.maximum(lam_s - alpha, 0.0)))
    stationarity = float(viol.max(initial=0.0))
    stationarity = max(stationarity, float(np.maximum(-alpha, 0.0).max(initial=0.0)))

    if mode == "strong":
        thresh = lam_s + alpha[iu] + alpha[ik]
    else:
        thresh = lam_s + 2.0 * np.minimum(alpha[iu], alpha[ik])
    tau_cert = soft_threshold(ztr_partial, thresh) / znorm2
    inter_viol = np.abs(tau - tau_cert)
    if inter_viol.size:
        stationarity = max(stationarity, float(inter_viol.max()))

    cs = float(np.max(alpha * np.maximum(slack, 0.0), initial=0.0))
    ok = stationarity <= tol and cs <= tol

    inconclusive = False
    if not ok and mode == "weak" and not determined.all():
        worst_pair = int(np.argmax(inter_viol)) if inter_viol.size else -1
        touches_free = worst_pair >= 0 and (
            not determined[iu[worst_pair]] or not determined[ik[worst_pair]]
        )
        main_worst = int(np.argmax(viol))
        inconclusive = touches_free or not determined[main_worst]

    return KktReport(
        alpha_hat=alpha,
        max_stationarity_violation=stationarity,
        max_complementary_slackness_violation=cs,
        pass_=ok,
        inconclusive=inconclusive,
    )
