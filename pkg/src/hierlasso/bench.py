"""Simulation scenarios, baselines, cross-validation, and the method benchmark.

Baselines: a plain lasso solved by cyclic coordinate descent (main effects
only, or all pairwise products appended) and greedy forward stepwise in
three flavors (mains only, all pairs, and hierarchy-restricted where an
interaction becomes eligible only once both its main effects are in the
model). Scenario generators rescale the drawn coefficient blocks so the
realized signal-to-noise ratios are exact on the sampled design. Tuning is
by an oracle that knows the noiseless signal, or by k-fold CV.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import build_interactions, standardize
from .model import Dataset, FitState, InteractionBasis, fitted_centered
from .strong import AdmmOptions, fit_strong_path
from .weak import SolveOptions, fit_weak_path, default_lambda_grid


@dataclass
class ScenarioConfig:
    scenario: str = "I"          # I | II | III | IV
    n: int = 100
    p: int = 30
    n_main: int = 10
    n_inter: int = 20
    snr_main: float = 1.5
    snr_inter: float = 1.0
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in ("I", "II", "III", "IV"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.n_main > self.p:
            raise ValueError("n_main cannot exceed p")
        if self.n_inter > self.p * (self.p - 1) // 2:
            raise ValueError("n_inter exceeds the number of pairs")


def simulate_scenario(cfg: ScenarioConfig):
    """Draw (x_raw, y, mu, true_beta, true_theta) for one scenario.

    Design entries are i.i.d. standard normal. Nonzero mains get random
    signs; interaction placement depends on the scenario: I puts them
    among pairs of active mains, II among pairs of inactive mains, III has
    no mains at all, IV no interactions. Each signal block is rescaled so
    its realized population variance over the drawn rows equals the target
    SNR times sigma^2.
    """
    rng = np.random.default_rng(cfg.seed)
    n, p = cfg.n, cfg.p
    x = rng.standard_normal((n, p))

    beta = np.zeros(p)
    main_support = np.array([], dtype=int)
    if cfg.scenario in ("I", "II", "IV"):
        main_support = rng.choice(p, size=cfg.n_main, replace=False)
        beta[main_support] = rng.choice([-1.0, 1.0], size=cfg.n_main)

    theta = np.zeros((p, p))
    if cfg.scenario in ("I", "II", "III"):
        if cfg.scenario == "I":
            pool = [(j, k) for i, j in enumerate(np.sort(main_support))
                    for k in np.sort(main_support)[i + 1:]]
        elif cfg.scenario == "II":
            off = np.setdiff1d(np.arange(p), main_support)
            pool = [(off[i], off[j]) for i in range(off.size)
                    for j in range(i + 1, off.size)]
        else:
            pool = [(j, k) for j in range(p) for k in range(j + 1, p)]
        if cfg.n_inter > len(pool):
            raise ValueError(
                f"scenario {cfg.scenario} cannot place {cfg.n_inter} interactions "
                f"among {len(pool)} eligible pairs"
            )
        pick = rng.choice(len(pool), size=cfg.n_inter, replace=False)
        for idx in pick:
            j, k = pool[idx]
            v = rng.choice([-1.0, 1.0])
            theta[j, k] = theta[k, j] = v

    m_main = x @ beta
    iu = np.triu_indices(p, k=1)
    m_inter = (x[:, iu[0]] * x[:, iu[1]]) @ theta[iu]

    sig2 = cfg.sigma ** 2
    if beta.any():
        scale = np.sqrt(cfg.snr_main * sig2 / m_main.var())
        beta *= scale
        m_main *= scale
    if theta.any():
        scale = np.sqrt(cfg.snr_inter * sig2 / m_inter.var())
        theta *= scale
        m_inter *= scale

    mu = m_main + m_inter
    y = mu + cfg.sigma * rng.standard_normal(n)
    return x, y, mu, beta, theta


# ---------------------------------------------------------------------------
# Plain lasso by cyclic coordinate descent
# ---------------------------------------------------------------------------

@dataclass
class LassoPath:
    lambdas: np.ndarray
    coefs: np.ndarray      # (L, d)
    intercept: float       # mean of y, added back at prediction


def fit_lasso(columns: np.ndarray, y: np.ndarray, lambdas,
              tol: float = 1e-10, max_sweeps: int = 100000) -> LassoPath:
    """Warm-started cyclic coordinate descent for the plain lasso.

    ``columns`` should be centered; ``y`` is centered internally. Each
    coordinate update is the closed-form soft-threshold of its partial
    residual correlation. Active-set sweeps alternate with full passes.
    """
    columns = np.asarray(columns, dtype=float)
    y = np.asarray(y, dtype=float)
    ybar = float(y.mean())
    r = y - ybar
    lambdas = np.asarray(lambdas, dtype=float)
    d = columns.shape[1]
    col_sq = (columns ** 2).sum(axis=0)
    ok = col_sq > 0
    coef = np.zeros(d)
    out = np.empty((lambdas.size, d))

    def sweep(idx, lam):
        nonlocal r
        biggest = 0.0
        for j in idx:
            old = coef[j]
            c = columns[:, j] @ r + old * col_sq[j]
            new = np.sign(c) * max(abs(c) - lam, 0.0) / col_sq[j]
            if new != old:
                r += columns[:, j] * (old - new)
                coef[j] = new
                biggest = max(biggest, abs(new - old) * np.sqrt(col_sq[j]))
        return biggest

    all_idx = np.flatnonzero(ok)
    sweeps = 0
    for li, lam in enumerate(lambdas):
        scale = max(1.0, np.sqrt(float(r @ r)))
        while True:
            delta = sweep(all_idx, lam)
            sweeps += 1
            if delta <= tol * scale:
                break
            active = np.flatnonzero(coef != 0.0)
            while active.size:
                delta = sweep(active, lam)
                sweeps += 1
                if delta <= tol * scale or sweeps >= max_sweeps:
                    break
            if sweeps >= max_sweeps:
                break
        out[li] = coef
    return LassoPath(lambdas=lambdas, coefs=out, intercept=ybar)


def lasso_kkt_violation(columns, y, coef, lam) -> float:
    """Max violation of the lasso stationarity conditions, in lam units."""
    r = (y - y.mean()) - columns @ coef
    grad = columns.T @ r
    active = coef != 0
    viol = np.abs(grad[~active]).max(initial=0.0) - lam
    viol = max(viol, np.abs(grad[active] - lam * np.sign(coef[active])).max(initial=0.0))
    return float(max(viol, 0.0))


# ---------------------------------------------------------------------------
# Forward stepwise
# ---------------------------------------------------------------------------

@dataclass
class StepModel:
    terms: list            # ("main", j) or ("pair", j, k)
    yhat: np.ndarray       # uncentered fitted values
    rss: float


def _candidate_columns(x_std: np.ndarray, mode: str):
    n, p = x_std.shape
    cols = [x_std[:, j] for j in range(p)]
    terms = [("main", j) for j in range(p)]
    if mode in ("allpairs", "hier"):
        for j in range(p):
            for k in range(j + 1, p):
                c = x_std[:, j] * x_std[:, k]
                cols.append(c - c.mean())
                terms.append(("pair", j, k))
    return np.column_stack(cols), terms


def forward_stepwise(x, y, mode: str, k_max: int) -> list[StepModel]:
    """Greedy RSS-minimizing forward selection.

    mode "main" considers main effects only, "allpairs" adds every product
    column, "hier" admits a product only once both of its main effects are
    already selected. Candidates whose residual after projection on the
    current model is numerically degenerate are skipped.
    """
    if mode not in ("main", "allpairs", "hier"):
        raise ValueError(f"unknown stepwise mode {mode!r}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    xs = x - x.mean(axis=0)
    cols, terms = _candidate_columns(xs, mode)
    d = cols.shape[1]
    if k_max > d:
        raise ValueError(f"k_max={k_max} exceeds {d} candidates")

    ybar = y.mean()
    r = y - ybar
    rss = float(r @ r)
    q = np.zeros((n, 0))
    resid_cols = cols.copy()            # columns orthogonalized to the model
    resid_sq = (resid_cols ** 2).sum(axis=0)
    col_sq = resid_sq.copy()
    selected_mains: set[int] = set()
    in_model = np.zeros(d, dtype=bool)
    yhat = np.full(n, ybar)
    models: list[StepModel] = []

    for _ in range(k_max):
        eligible = ~in_model & (resid_sq > 1e-10 * np.maximum(col_sq, 1e-300))
        if mode == "hier":
            for c, term in enumerate(terms):
                if term[0] == "pair" and eligible[c]:
                    if term[1] not in selected_mains or term[2] not in selected_mains:
                        eligible[c] = False
        if not eligible.any():
            break
        gains = np.zeros(d)
        proj = resid_cols[:, eligible].T @ r
        gains[eligible] = proj ** 2 / resid_sq[eligible]
        best = int(np.argmax(gains))
        if gains[best] <= 1e-12 * max(rss, 1.0):
            break

        qnew = resid_cols[:, best] / np.sqrt(resid_sq[best])
        coeff = float(qnew @ r)
        r = r - qnew * coeff
        yhat = yhat + qnew * coeff
        rss = float(r @ r)
        in_model[best] = True
        if terms[best][0] == "main":
            selected_mains.add(terms[best][1])
        # orthogonalize the remaining candidates against the new direction
        dots = qnew @ resid_cols
        resid_cols = resid_cols - np.outer(qnew, dots)
        resid_sq = np.maximum((resid_cols ** 2).sum(axis=0), 0.0)
        q = np.column_stack([q, qnew])

        models.append(StepModel(
            terms=[terms[c] for c in np.flatnonzero(in_model)],
            yhat=yhat.copy(),
            rss=rss,
        ))
    return models


# ---------------------------------------------------------------------------
# Oracle selection and cross-validation
# ---------------------------------------------------------------------------

def oracle_select(fits, mu) -> int:
    """Index of the fitted-value vector closest to the noiseless signal."""
    mu = np.asarray(mu, dtype=float)
    fits = list(fits)
    if not fits:
        raise ValueError("empty path")
    errs = [float(np.sum((np.asarray(f) - mu) ** 2)) for f in fits]
    return int(np.argmin(errs))


def _fit_method_path(method, data: Dataset, basis: InteractionBasis, lambdas,
                     opts=None, admm_opts=None):
    """Fitted-value matrix (n, L) plus per-level (beta, effective theta)."""
    n, p = data.n, data.p
    if method in ("weak", "strong"):
        if method == "weak":
            path = fit_weak_path(data, basis, lambdas, opts=opts)
        else:
            path = fit_strong_path(data, basis, lambdas, opts=opts, admm_opts=admm_opts)
        fits = np.column_stack(
            [data.y_mean + fitted_centered(s, data, basis) for s in path.states]
        )
        coefs = [(s.beta, 0.5 * (s.theta + s.theta.T)) for s in path.states]
        return fits, coefs
    iu = np.triu_indices(p, k=1)
    if method == "mel":
        cols = data.x_std
    elif method == "apl":
        prod = data.x_std[:, iu[0]] * data.x_std[:, iu[1]]
        cols = np.hstack([data.x_std, prod - prod.mean(axis=0)])
    else:
        raise ValueError(f"unknown method {method!r}")
    lp = fit_lasso(cols, data.y_centered + data.y_mean, lambdas)
    fits = lp.intercept + cols @ lp.coefs.T
    coefs = []
    for c in lp.coefs:
        beta = c[:p] if method == "apl" else c
        theta = np.zeros((p, p))
        if method == "apl":
            theta[iu] = c[p:]
            theta = theta + theta.T
        coefs.append((beta, theta))
    return fits, coefs


def lasso_lambda_grid(cols, y, nlambda=50, min_ratio=0.01):
    yc = y - y.mean()
    lmax = float(np.abs(cols.T @ yc).max())
    return np.geomspace(max(lmax, 1e-12), max(lmax, 1e-12) * min_ratio, nlambda)


def kfold_cv(
    data: Dataset,
    basis: InteractionBasis,
    method: str,
    lambdas,
    k: int,
    seed: int,
    folds: np.ndarray | None = None,
    opts: SolveOptions | None = None,
    admm_opts: AdmmOptions | None = None,
):
    """K-fold cross-validation with per-fold restandardization.

    Fold assignment is a seeded permutation cut into k blocks (or an
    explicit assignment array). Each training part is standardized afresh
    and held-out rows are transformed with the training statistics only.
    Returns (cv_mean, cv_se, lambda_min, lambda_1se) with fold-level SEs.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    lambdas = np.asarray(lambdas, dtype=float)
    n = data.n
    if folds is None:
        perm = np.random.default_rng(seed).permutation(n)
        folds = np.empty(n, dtype=int)
        for i, block in enumerate(np.array_split(perm, k)):
            folds[block] = i
    else:
        folds = np.asarray(folds, dtype=int)
        if folds.shape[0] != n:
            raise ValueError("folds must assign every row")
        k = int(folds.max()) + 1

    x_raw = data.x_raw()
    y_raw = data.y_raw()
    fold_err = np.empty((k, lambdas.size))
    for f in range(k):
        test = folds == f
        train = ~test
        if test.sum() < 2 or train.sum() < 2:
            raise ValueError(f"fold {f} has fewer than 2 rows")
        dtr = standardize(x_raw[train], y_raw[train], sd_convention=data.sd_convention)
        btr = build_interactions(dtr)
        fits_tr, coefs = _fit_method_path(method, dtr, btr, lambdas,
                                          opts=opts, admm_opts=admm_opts)
        xte = (x_raw[test] - dtr.col_means) / dtr.col_sds
        iu = np.triu_indices(data.p, k=1)
        zc = None
        if method in ("weak", "strong", "apl"):
            prod_te = xte[:, iu[0]] * xte[:, iu[1]]
            # center the product features with the training means
            zc = prod_te - (dtr.x_std[:, iu[0]] * dtr.x_std[:, iu[1]]).mean(axis=0)
        preds = np.empty((int(test.sum()), lambdas.size))
        for li, (beta, theta) in enumerate(coefs):
            yh = dtr.y_mean + xte @ beta
            if zc is not None:
                yh = yh + zc @ theta[iu]
            preds[:, li] = yh
        fold_err[f] = ((y_raw[test][:, None] - preds) ** 2).mean(axis=0)

    cv_mean = fold_err.mean(axis=0)
    cv_se = fold_err.std(axis=0, ddof=1) / np.sqrt(k)
    i_min = int(np.argmin(cv_mean))
    within = np.flatnonzero(cv_mean <= cv_mean[i_min] + cv_se[i_min])
    i_1se = int(within[0])  # largest penalty within one SE (grid is descending)
    return cv_mean, cv_se, float(lambdas[i_min]), float(lambdas[i_1se])


# ---------------------------------------------------------------------------
# The six-method benchmark
# ---------------------------------------------------------------------------

@dataclass
class BenchOptions:
    nlambda_hl: int = 20
    nlambda_lasso: int = 50
    lambda_min_ratio: float = 0.01
    k_max: int = 40
    hl_variant: str = "strong"
    rel_tol: float = 1e-8
    admm_tol: float = 1e-4
    admm_max_iters: int = 80
    zero_tol: float = 1e-8


@dataclass
class MethodResult:
    prediction_error: np.ndarray   # per replicate
    sensitivity: np.ndarray
    specificity: np.ndarray
    parameter_sparsity: np.ndarray
    practical_sparsity: np.ndarray

    def summary(self) -> dict:
        def pair(v):
            v = v[~np.isnan(v)]
            if v.size == 0:
                return (float("nan"), float("nan"))
            return (float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0)

        out = {}
        for name in ("prediction_error", "sensitivity", "specificity",
                     "parameter_sparsity", "practical_sparsity"):
            m, s = pair(getattr(self, name))
            out[name] = m
            out[name + "_se"] = s
        return out


@dataclass
class BenchResult:
    scenario: ScenarioConfig
    reps: int
    methods: dict = field(default_factory=dict)   # name -> MethodResult


def _support_metrics(theta_hat, theta_true, p, zero_tol):
    iu = np.triu_indices(p, k=1)
    true_nz = np.abs(theta_true[iu]) > 0
    thr = zero_tol * max(1.0, float(np.abs(theta_hat).max(initial=0.0)))
    hat_nz = np.abs(theta_hat[iu]) > thr
    sens = float(hat_nz[true_nz].mean()) if true_nz.any() else float("nan")
    spec = float((~hat_nz[~true_nz]).mean()) if (~true_nz).any() else float("nan")
    return sens, spec


def _sparsity_from(beta, theta, p, zero_tol):
    thr_b = zero_tol * max(1.0, float(np.abs(beta).max(initial=0.0)))
    thr_t = zero_tol * max(1.0, float(np.abs(theta).max(initial=0.0)))
    main_nz = np.abs(beta) > thr_b
    inter_nz = np.abs(theta) > thr_t
    iu = np.triu_indices(p, k=1)
    parameter = int(main_nz.sum()) + int(inter_nz[iu].sum())
    practical = int((main_nz | inter_nz.any(axis=1)).sum())
    return parameter, practical


def _stepwise_support(model: StepModel, p):
    beta = np.zeros(p)
    theta = np.zeros((p, p))
    for term in model.terms:
        if term[0] == "main":
            beta[term[1]] = 1.0
        else:
            theta[term[1], term[2]] = theta[term[2], term[1]] = 1.0
    return beta, theta


def run_benchmark(cfg: ScenarioConfig, methods, reps: int, seed: int,
                  options: BenchOptions | None = None) -> BenchResult:
    """Oracle-tuned comparison of methods over seeded replicates.

    Per replicate: simulate the scenario, fit every requested method along
    its own tuning path, select the model with the smallest distance to
    the noiseless signal, and record prediction error sigma^2 +
    ||yhat - mu||^2 / n, interaction recovery, and sparsity.
    """
    options = options or BenchOptions()
    methods = list(methods)
    rep_seeds = np.random.SeedSequence(seed).generate_state(reps, dtype=np.uint64)
    store = {m: {k: [] for k in ("pe", "sens", "spec", "par", "prac")} for m in methods}

    for rep in range(reps):
        rcfg = ScenarioConfig(
            scenario=cfg.scenario, n=cfg.n, p=cfg.p, n_main=cfg.n_main,
            n_inter=cfg.n_inter, snr_main=cfg.snr_main, snr_inter=cfg.snr_inter,
            sigma=cfg.sigma, seed=int(rep_seeds[rep]),
        )
        x, y, mu, beta_t, theta_t = simulate_scenario(rcfg)
        data = standardize(x, y)
        basis = build_interactions(data)
        p, sig2 = cfg.p, cfg.sigma ** 2
        iu = np.triu_indices(p, k=1)

        for m in methods:
            if m in ("hl", "apl", "mel"):
                solver = options.hl_variant if m == "hl" else m
                if m == "hl":
                    lambdas = default_lambda_grid(
                        data, basis, options.nlambda_hl, options.lambda_min_ratio)
                    opts = SolveOptions(rel_tol=options.rel_tol, max_iters=20000,
                                        track_objective=False)
                    admm = AdmmOptions(tol_primal=options.admm_tol,
                                       tol_dual=options.admm_tol,
                                       max_iters=options.admm_max_iters)
                    fits, coefs = _fit_method_path(solver, data, basis, lambdas,
                                                   opts=opts, admm_opts=admm)
                else:
                    if m == "mel":
                        cols = data.x_std
                    else:
                        prod = data.x_std[:, iu[0]] * data.x_std[:, iu[1]]
                        cols = np.hstack([data.x_std, prod - prod.mean(axis=0)])
                    lambdas = lasso_lambda_grid(cols, y, options.nlambda_lasso,
                                                options.lambda_min_ratio)
                    fits, coefs = _fit_method_path(m, data, basis, lambdas)
                sel = oracle_select(fits.T, mu)
                yhat = fits[:, sel]
                beta_hat, theta_hat = coefs[sel]
            else:
                mode = {"mef": "main", "apf": "allpairs", "hf": "hier"}[m]
                n_candidates = p if mode == "main" else p + p * (p - 1) // 2
                k_max = min(options.k_max, cfg.n - 2, n_candidates)
                models = forward_stepwise(x, y, mode, k_max)
                if not models:
                    yhat = np.full(cfg.n, y.mean())
                    beta_hat = np.zeros(p)
                    theta_hat = np.zeros((p, p))
                else:
                    sel = oracle_select([mm.yhat for mm in models], mu)
                    yhat = models[sel].yhat
                    beta_hat, theta_hat = _stepwise_support(models[sel], p)

            pe = sig2 + float(np.sum((yhat - mu) ** 2)) / cfg.n
            sens, spec = _support_metrics(theta_hat, theta_t, p, options.zero_tol)
            par, prac = _sparsity_from(beta_hat, theta_hat, p, options.zero_tol)
            store[m]["pe"].append(pe)
            store[m]["sens"].append(sens)
            store[m]["spec"].append(spec)
            store[m]["par"].append(par)
            store[m]["prac"].append(prac)

    result = BenchResult(scenario=cfg, reps=reps)
    for m in methods:
        result.methods[m] = MethodResult(
            prediction_error=np.array(store[m]["pe"]),
            sensitivity=np.array(store[m]["sens"]),
            specificity=np.array(store[m]["spec"]),
            parameter_sparsity=np.array(store[m]["par"], dtype=float),
            practical_sparsity=np.array(store[m]["prac"], dtype=float),
        )
    return result
