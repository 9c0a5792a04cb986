"""Statistics over runs: bootstrap tests, trend fits, and the metric->OOD study.

Bootstrap resampling is two-level (model seeds with replacement, then
datapoints with replacement) and yields percentile confidence intervals; the
pairwise comparison p-value is the resampled frequency of the difference
falling at or below zero. The metric->OOD correlation study refits an OLS
composite on random 90/10 model splits and reports the held-out Pearson
correlation per predictor set.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .validation import ContractError

FAITH_THRESHOLDS = {"suff": (0.01, 0.25), "comp": (0.20, 0.40)}
FAITH_LABELS = ("worst", "middle", "best")

PREDICTOR_SETS = {
    "id_acc": ("id_acc",),
    "rrr": ("rrr_suff", "rrr_inv", "rrr_unc"),
    "id_acc+conf": ("id_acc", "mean_confidence"),
    "id_acc+expl": ("id_acc", "plausibility", "faith_suff", "faith_comp"),
    "id_acc+rrr": ("id_acc", "rrr_suff", "rrr_inv", "rrr_unc"),
    "all": ("id_acc", "mean_confidence", "plausibility", "faith_suff", "faith_comp",
            "rrr_suff", "rrr_inv", "rrr_unc"),
}


@dataclass
class BootstrapResult:
    estimate: float
    ci_lo: float
    ci_hi: float
    p_value: float | None
    resamples: int

    def to_dict(self):
        return {"estimate": self.estimate, "ci_lo": self.ci_lo, "ci_hi": self.ci_hi,
                "p_value": self.p_value, "resamples": self.resamples}


def _as_matrix(values):
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 1:
        v = v[None, :]
    if v.ndim != 2:
        raise ContractError("bootstrap input must be (seeds, datapoints) or a vector")
    if v.shape[0] < 2 and v.shape[1] < 2:
        raise ContractError("need at least 2 seeds or 2 datapoints to resample")
    return v


def _resampled_means(values, resamples, rng, data_idx=None, chunk=1000):
    s, d = values.shape
    out = np.empty(resamples)
    for lo in range(0, resamples, chunk):
        c = min(chunk, resamples - lo)
        seed_idx = rng.integers(0, s, size=(c, s))
        didx = rng.integers(0, d, size=(c, d)) if data_idx is None else data_idx[lo:lo + c]
        sel = values[seed_idx[:, :, None], didx[:, None, :]]
        out[lo:lo + c] = sel.mean(axis=(1, 2))
    return out


def bootstrap(values, resamples=10000, seed=0):
    """Percentile CI for the mean over (seeds x datapoints) values."""
    v = _as_matrix(values)
    rng = np.random.default_rng(seed)
    means = _resampled_means(v, resamples, rng)
    lo, hi = np.percentile(means, [2.5, 97.5])
    return BootstrapResult(estimate=float(v.mean()), ci_lo=float(lo), ci_hi=float(hi),
                           p_value=None, resamples=resamples)


def bootstrap_compare(values_a, values_b, resamples=10000, seed=0):
    """One-sided test of mean(a) > mean(b); shared datapoint resamples when
    the two datapoint axes line up (paired evaluation on one test set)."""
    a, b = _as_matrix(values_a), _as_matrix(values_b)
    rng = np.random.default_rng(seed)
    paired = a.shape[1] == b.shape[1]
    chunk = 1000
    diffs = np.empty(resamples)
    for lo in range(0, resamples, chunk):
        c = min(chunk, resamples - lo)
        didx = rng.integers(0, a.shape[1], size=(c, a.shape[1])) if paired else None
        ma = _resampled_means(a, c, rng, data_idx=didx)
        mb = _resampled_means(b, c, rng, data_idx=didx)
        diffs[lo:lo + c] = ma - mb
    lo_q, hi_q = np.percentile(diffs, [2.5, 97.5])
    p = float(np.mean(diffs <= 0.0))
    return BootstrapResult(estimate=float(a.mean() - b.mean()), ci_lo=float(lo_q),
                           ci_hi=float(hi_q), p_value=p, resamples=resamples)


# ---------------------------------------------------------------------------
# logistic trends (accuracy vs plausibility per faithfulness category)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fit_logistic(x, y, ridge=0.0, max_iter=100, tol=1e-8):
    """Newton MLE of P(y=1) = sigmoid(b0 + b1 x).

    Returns (beta, standard errors, converged flag). Divergence of ||beta||
    (complete separation) reports converged=False.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    design = np.column_stack([np.ones_like(x), x])
    beta = np.zeros(2)
    converged = False
    for _ in range(max_iter):
        p = _sigmoid(design @ beta)
        grad = design.T @ (y - p) - ridge * beta
        if np.linalg.norm(grad) < tol:
            converged = True
            break
        w = np.maximum(p * (1.0 - p), 1e-12)
        hess = design.T @ (design * w[:, None]) + ridge * np.eye(2)
        beta = beta + np.linalg.solve(hess, grad)
        if np.linalg.norm(beta) > 1e3:
            break
    p = _sigmoid(design @ beta)
    w = np.maximum(p * (1.0 - p), 1e-12)
    hess = design.T @ (design * w[:, None]) + ridge * np.eye(2)
    se = np.sqrt(np.diag(np.linalg.inv(hess)))
    return beta, se, converged


def fit_logistic_trend(groups, ridge_on_separation=1e-4, min_points=20):
    """Per-group logistic fit of correctness on plausibility.

    groups: {label: (plausibility array, binary outcome array)}. Groups with
    complete separation are refit with a small ridge penalty.
    """
    out = {}
    for label, (x, y) in groups.items():
        y = np.asarray(y, dtype=np.float64)
        if len(y) < min_points or len(np.unique(y)) < 2:
            raise ContractError(f"group {label!r} needs >= {min_points} points "
                                "with both outcomes present")
        beta, se, converged = fit_logistic(x, y)
        ridge_used = 0.0
        if not converged:
            beta, se, converged = fit_logistic(x, y, ridge=ridge_on_separation)
            ridge_used = ridge_on_separation
        out[label] = {"intercept": float(beta[0]), "slope": float(beta[1]),
                      "se_intercept": float(se[0]), "se_slope": float(se[1]),
                      "ridge": ridge_used, "n": int(len(y))}
    return out


def trend_curve(fit, x_grid):
    """Plot-data series for one fitted trend."""
    z = fit["intercept"] + fit["slope"] * np.asarray(x_grid)
    return _sigmoid(z)


# ---------------------------------------------------------------------------
# faithfulness categories and conditional tables


def categorize_faithfulness(values, kind, thresholds=None, best_inclusive=True):
    """Worst/Middle/Best labels for per-datapoint Sufficiency (lower is
    better, Best at/below the first threshold) or Comprehensiveness (higher
    is better, Best at/above the second threshold)."""
    if kind not in ("suff", "comp"):
        raise ContractError("kind must be 'suff' or 'comp'")
    lo, hi = thresholds if thresholds is not None else FAITH_THRESHOLDS[kind]
    if not lo < hi:
        raise ContractError("thresholds must be ordered")
    v = np.asarray(values, dtype=np.float64)
    labels = np.empty(v.shape, dtype=object)
    if kind == "suff":
        best = (v <= lo) if best_inclusive else (v < lo)
        labels[best] = "best"
        labels[~best & (v < hi)] = "middle"
        labels[v >= hi] = "worst"
    else:
        labels[v < lo] = "worst"
        labels[(v >= lo) & (v < hi)] = "middle"
        labels[v >= hi] = "best"
    counts = {name: int(np.sum(labels == name)) for name in FAITH_LABELS}
    total = max(len(v), 1)
    proportions = {name: counts[name] / total for name in FAITH_LABELS}
    return labels, proportions


def _tercile_bucket(values, edges=None):
    v = np.asarray(values, dtype=np.float64)
    if edges is None:
        edges = np.quantile(v, [1 / 3, 2 / 3])
    labels = np.where(v < edges[0], "low", np.where(v < edges[1], "middle", "high"))
    return labels, edges


def conditional_table(records, kind="suff", thresholds=None, bucket_edges=None):
    """Faithfulness distribution conditional on model- and datapoint-level
    plausibility buckets. Rows are normalized; empty cells carry count 0."""
    if not records:
        raise ContractError("need per-datapoint records")
    model_ids = sorted({r["model_id"] for r in records})
    model_mean = {mid: np.mean([r["plausibility"] for r in records if r["model_id"] == mid])
                  for mid in model_ids}
    model_bucket_of, _ = _tercile_bucket([model_mean[m] for m in model_ids])
    model_bucket = dict(zip(model_ids, model_bucket_of))
    data_bucket, _ = _tercile_bucket([r["plausibility"] for r in records], bucket_edges)
    faith, _ = categorize_faithfulness([r[kind] for r in records], kind, thresholds)

    table = {}
    for mb in ("low", "middle", "high"):
        for db in ("low", "middle", "high"):
            idx = [i for i, r in enumerate(records)
                   if model_bucket[r["model_id"]] == mb and data_bucket[i] == db]
            counts = np.array([sum(1 for i in idx if faith[i] == name)
                               for name in FAITH_LABELS], dtype=np.float64)
            total = counts.sum()
            dist = (counts / total) if total > 0 else np.zeros(3)
            table[(mb, db)] = {"distribution": dist.tolist(), "count": int(total)}
    return table


# ---------------------------------------------------------------------------
# metric -> OOD generalization study


def _pearson(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def _design(table, columns, rows=slice(None)):
    cols = [np.asarray(table[c], dtype=np.float64)[rows] for c in columns]
    return np.column_stack(cols)


def _drop_collinear(x):
    """Greedily drop columns until the design (with intercept) has full rank."""
    keep = list(range(x.shape[1]))
    def aug(cols):
        return np.column_stack([np.ones(x.shape[0]), x[:, cols]])
    while keep and np.linalg.matrix_rank(aug(keep)) < len(keep) + 1:
        dropped = keep.pop()
        warnings.warn(f"dropping collinear predictor column {dropped}")
    return keep


def metric_ood_cv(table, predictor_sets=None, target="ood_acc", resamples=10000,
                  seed=0, train_frac=0.9):
    """Cross-validated correlation between metric composites and OOD accuracy.

    table: mapping column name -> per-model values (one entry per trained
    model). For every resample, a train_frac/1-train_frac model split is
    drawn, an OLS composite is fit on the train models, and the Pearson
    correlation between its held-out predictions and the actual OOD accuracy
    is recorded. Singleton predictor sets reduce to plain correlation.
    """
    predictor_sets = predictor_sets if predictor_sets is not None else PREDICTOR_SETS
    y = np.asarray(table[target], dtype=np.float64)
    n = len(y)
    if n < 20:
        raise ContractError("need at least 20 models for the correlation study")
    n_train = int(round(train_frac * n))
    if not 2 <= n_train <= n - 2:
        raise ContractError("train fraction leaves too few models on one side")
    rng = np.random.default_rng(seed)

    results = {}
    for name, columns in predictor_sets.items():
        x_full = _design(table, columns)
        kept = _drop_collinear(x_full)
        x_full = x_full[:, kept]
        train_corrs = np.empty(resamples)
        test_corrs = np.empty(resamples)
        for r in range(resamples):
            perm = rng.permutation(n)
            tr, te = perm[:n_train], perm[n_train:]
            a = np.column_stack([np.ones(len(tr)), x_full[tr]])
            coef, *_ = np.linalg.lstsq(a, y[tr], rcond=None)
            pred_tr = a @ coef
            pred_te = np.column_stack([np.ones(len(te)), x_full[te]]) @ coef
            train_corrs[r] = _pearson(pred_tr, y[tr])
            test_corrs[r] = _pearson(pred_te, y[te])
        lo, hi = np.percentile(test_corrs, [2.5, 97.5])
        results[name] = {
            "train_corr": float(train_corrs.mean()),
            "test_corr": float(test_corrs.mean()),
            "test_ci": (float(lo), float(hi)),
            "columns": [columns[i] for i in kept],
        }
    return results
