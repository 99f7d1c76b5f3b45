"""Standardization, interaction-column construction, and raw-scale prediction.

The preprocessing protocol: standardize X to mean-0 / sd-1 columns, center
y, form the ordered-pair product columns from the standardized predictors,
then center those columns. Interaction columns are never rescaled. New data
is always transformed with the training statistics.
"""

from __future__ import annotations

import numpy as np

from .model import Dataset, FitState, InteractionBasis, theta_to_vec

# Above this many predictors the dense Z (n x p(p-1)) is generated on demand.
MATERIALIZE_MAX_P = 400


def standardize(
    x_raw: np.ndarray,
    y_raw: np.ndarray,
    sd_convention: str = "population",
    column_names: list[str] | None = None,
) -> Dataset:
    """Center and scale the design, center the response.

    Raises if n < 2 or any column is constant (the offending column is
    named in the error). ``sd_convention`` chooses the divisor n
    ("population", default) or n - 1 ("sample"); the choice is recorded so
    predictions are reproducible.
    """
    x_raw = np.asarray(x_raw, dtype=float)
    y_raw = np.asarray(y_raw, dtype=float).ravel()
    if x_raw.ndim != 2:
        raise ValueError("x_raw must be a 2-d array")
    n, p = x_raw.shape
    if n < 2:
        raise ValueError(f"need at least 2 rows, got {n}")
    if y_raw.shape[0] != n:
        raise ValueError(f"y has {y_raw.shape[0]} rows but x has {n}")
    if not np.all(np.isfinite(x_raw)) or not np.all(np.isfinite(y_raw)):
        raise ValueError("non-finite values in input; missing data is not supported")
    if sd_convention not in ("population", "sample"):
        raise ValueError(f"unknown sd convention {sd_convention!r}")

    ddof = 0 if sd_convention == "population" else 1
    means = x_raw.mean(axis=0)
    sds = x_raw.std(axis=0, ddof=ddof)
    bad = np.flatnonzero(sds <= 0)
    if bad.size:
        j = int(bad[0])
        name = column_names[j] if column_names else f"column {j}"
        raise ValueError(f"constant column: {name} has zero standard deviation")

    y_mean = float(y_raw.mean())
    return Dataset(
        x_std=(x_raw - means) / sds,
        y_centered=y_raw - y_mean,
        y_mean=y_mean,
        col_means=means,
        col_sds=sds,
        n=n,
        p=p,
        sd_convention=sd_convention,
        column_names=list(column_names) if column_names else None,
    )


def _ordered_pairs(p: int) -> np.ndarray:
    pairs = [(j, k) for j in range(p) for k in range(p) if k != j]
    return np.asarray(pairs, dtype=int).reshape(-1, 2)


def build_interactions(data: Dataset, materialize: bool | None = None) -> InteractionBasis:
    """Centered product columns x_j * x_k for every ordered pair j != k.

    Column blocks are contiguous per leading index j. Stores the
    subtracted means and the post-centering squared norms. With p = 1 the
    basis is empty.
    """
    p, n = data.p, data.n
    pairs = _ordered_pairs(p)
    if materialize is None:
        materialize = p <= MATERIALIZE_MAX_P

    x = data.x_std
    if p < 2:
        return InteractionBasis(
            z=np.empty((n, 0)), pairs=pairs, z_means=np.empty(0),
            col_sq_norms=np.empty(0), p=p, n=n,
        )

    if materialize:
        prod = x[:, pairs[:, 0]] * x[:, pairs[:, 1]]
        z_means = prod.mean(axis=0)
        z = prod - z_means
        norms = (z ** 2).sum(axis=0)
        return InteractionBasis(z=z, pairs=pairs, z_means=z_means,
                                col_sq_norms=norms, p=p, n=n)

    z_means = np.empty(pairs.shape[0])
    norms = np.empty(pairs.shape[0])
    for c, (j, k) in enumerate(pairs):
        prod = x[:, j] * x[:, k]
        z_means[c] = prod.mean()
        norms[c] = ((prod - z_means[c]) ** 2).sum()
    return InteractionBasis(z=None, pairs=pairs, z_means=z_means,
                            col_sq_norms=norms, p=p, n=n, _x_std=x)


def interaction_features(
    basis: InteractionBasis, data: Dataset, x_new_raw: np.ndarray
) -> np.ndarray:
    """Centered interaction features for new raw rows, using training stats."""
    x_new_raw = np.atleast_2d(np.asarray(x_new_raw, dtype=float))
    if x_new_raw.shape[1] != data.p:
        raise ValueError(
            f"new data has {x_new_raw.shape[1]} columns, model expects {data.p}"
        )
    xs = (x_new_raw - data.col_means) / data.col_sds
    if basis.n_cols == 0:
        return np.empty((xs.shape[0], 0))
    return xs[:, basis.pairs[:, 0]] * xs[:, basis.pairs[:, 1]] - basis.z_means


def predict(
    state: FitState, data: Dataset, basis: InteractionBasis, x_new_raw: np.ndarray
) -> np.ndarray:
    """Evaluate the fitted model on raw-scale rows.

    New rows are standardized with the stored training statistics, the
    interaction features are centered with the stored means, and the
    result is beta0 + X_new beta + Z_new vec(theta) / 2. For Gaussian fits
    beta0 is the training response mean; for logistic fits the returned
    values are linear predictors.
    """
    x_new_raw = np.atleast_2d(np.asarray(x_new_raw, dtype=float))
    z_new = interaction_features(basis, data, x_new_raw)
    xs = (x_new_raw - data.col_means) / data.col_sds
    vec = theta_to_vec(state.theta)
    return state.beta0 + xs @ state.beta + z_new @ vec / 2.0
