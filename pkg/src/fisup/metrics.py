"""Evaluation metrics: accuracy, the RRR family, plausibility, faithfulness.

RRR metrics feed the model Replace-masked inputs derived from the binarized
human importance mask: accuracy on important-only inputs (RRR-Suff), mean
predicted probability on unimportant-only inputs (RRR-Unc, lower is better),
and prediction agreement under random additions of unimportant features
(RRR-Inv). Instances whose mask is all zeros are excluded from the RRR
metrics and reported in the excluded count.

Plausibility is the per-instance Spearman rank correlation between continuous
human scores and the model explanation; faithfulness compares the predicted
probability before and after keeping (Sufficiency) or removing
(Comprehensiveness) the explanation's top-ranked features, averaged over
10/25/50% sparsity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .explain import FIConfig, METHODS, batch_explain, select_best_explainer
from .model import forward_batch, params_to_nodes
from .replace import replace_batch
from .validation import ContractError

SPARSITY_LEVELS = (0.10, 0.25, 0.50)


@dataclass
class EvalConfig:
    replace: str = "all_neg_ones"
    explainer: str = "auto"          # explicit method name, or "auto" to select on Dev
    explainer_candidates: tuple = ("attention", "vanilla_grad", "loo", "koi")
    fi_class: str = "pred"
    fi_budget: int | None = None     # None = full explanation
    fi_samples: int = 1000           # sampling methods at metric grade
    sparsity_levels: tuple = SPARSITY_LEVELS
    rrr_inv_draws: int = 3
    select_subsample: int = 200
    batch_size: int = 256


@dataclass
class MetricsReport:
    id_acc: float
    ood_acc: float
    rrr_suff: float
    rrr_inv: float
    rrr_unc: float
    plausibility: float
    faith_suff: float
    faith_comp: float
    mean_confidence: float
    n_rrr_excluded: int
    explainer: str
    per_datapoint: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            "id_acc", "ood_acc", "rrr_suff", "rrr_inv", "rrr_unc", "plausibility",
            "faith_suff", "faith_comp", "mean_confidence", "n_rrr_excluded", "explainer")}


def _stacked(instances):
    return (np.stack([i.objects for i in instances]),
            np.stack([i.question for i in instances]),
            np.array([i.label for i in instances], dtype=int))


def _batched_probs(params, objects, questions, batch_size):
    outs = []
    for lo in range(0, len(objects), batch_size):
        outs.append(forward_batch(params, objects[lo:lo + batch_size],
                                  questions[lo:lo + batch_size])["probs"])
    return np.concatenate(outs)


def accuracy(params, instances, batch_size=256):
    if not instances:
        raise ContractError("accuracy needs a nonempty split")
    objects, questions, labels = _stacked(instances)
    probs = _batched_probs(params, objects, questions, batch_size)
    return float(np.mean(np.argmax(probs, axis=-1) == labels))


def _masks(instances):
    if any(i.important_mask is None for i in instances):
        raise ContractError("binarize the dataset before computing RRR metrics")
    return np.stack([i.important_mask for i in instances])


def _included(instances):
    masks = _masks(instances)
    keep = masks.sum(axis=1) > 0
    return keep, masks


def rrr_suff(params, instances, replace="all_neg_ones", batch_size=256):
    """Accuracy when only important rows are kept. Returns (value, excluded)."""
    keep, masks = _included(instances)
    included = [i for i, k in zip(instances, keep) if k]
    if not included:
        raise ContractError("every instance has an all-zero mask")
    objects, questions, labels = _stacked(included)
    x_e = replace_batch(objects, masks[keep], replace)
    probs = _batched_probs(params, x_e, questions, batch_size)
    value = float(np.mean(np.argmax(probs, axis=-1) == labels))
    return value, int((~keep).sum())


def rrr_unc(params, instances, replace="all_neg_ones", batch_size=256):
    """Mean predicted-class probability on unimportant-only inputs."""
    keep, masks = _included(instances)
    included = [i for i, k in zip(instances, keep) if k]
    if not included:
        raise ContractError("every instance has an all-zero mask")
    objects, questions, _ = _stacked(included)
    x_u = replace_batch(objects, 1.0 - masks[keep], replace)
    probs = _batched_probs(params, x_u, questions, batch_size)
    return float(np.mean(probs.max(axis=-1))), int((~keep).sum())


def rrr_inv(params, instances, rng, replace="all_neg_ones", draws=3, batch_size=256):
    """Prediction agreement between x_e and draws of x_(e u u)."""
    keep, masks = _included(instances)
    included = [i for i, k in zip(instances, keep) if k]
    if not included:
        raise ContractError("every instance has an all-zero mask")
    objects, questions, _ = _stacked(included)
    e = masks[keep]
    x_e = replace_batch(objects, e, replace)
    base_pred = np.argmax(_batched_probs(params, x_e, questions, batch_size), axis=-1)
    agree = np.zeros(len(included))
    for _ in range(draws):
        u = (rng.random(e.shape) < 0.5) * (1.0 - e)
        x_eu = replace_batch(objects, np.maximum(e, u), replace)
        pred = np.argmax(_batched_probs(params, x_eu, questions, batch_size), axis=-1)
        agree += (pred == base_pred)
    # no unimportant features: x_(e u u) == x_e, agreement 1 by construction
    return float(np.mean(agree / draws)), int((~keep).sum())


def mean_confidence(params, instances, batch_size=256):
    objects, questions, _ = _stacked(instances)
    probs = _batched_probs(params, objects, questions, batch_size)
    return float(np.mean(probs.max(axis=-1)))


# ---------------------------------------------------------------------------
# explanation-based metrics


def explanation_scores(params, instances, method, config, rng):
    """(B, n) matrix of explanation scores for a whole split, chunked."""
    if method not in METHODS:
        raise ContractError(f"unknown explanation method {method!r}")
    objects, questions, labels = _stacked(instances)
    n = objects.shape[1]
    budget = config.fi_budget
    if budget is None:
        budget = 2 * n if method == "avg_effect" else n
    fi = FIConfig(method=method, class_mode=config.fi_class, budget=budget,
                  replace=config.replace,
                  samples=config.fi_samples if method in ("expected_grad", "avg_effect") else 1)
    pnodes = params_to_nodes(params, trainable=False)
    out = np.zeros((len(instances), n))
    for lo in range(0, len(instances), config.batch_size):
        sl = slice(lo, lo + config.batch_size)
        if config.fi_class == "gt":
            classes = labels[sl]
        else:
            probs = _batched_probs(params, objects[sl], questions[sl], config.batch_size)
            classes = np.argmax(probs, axis=-1)
        scores, _ = batch_explain(pnodes, objects[sl], questions[sl], classes, fi, rng)
        out[sl] = scores.value if hasattr(scores, "value") else scores
    return out


def spearman(a, b):
    """Rank correlation with average ties; 0 when either vector is constant."""
    a, b = np.asarray(a), np.asarray(b)
    if np.all(a == a[0]) or np.all(b == b[0]):
        return 0.0
    rho = stats.spearmanr(a, b).statistic
    return 0.0 if math.isnan(rho) else float(rho)


def plausibility_per_instance(instances, scores):
    return np.array([spearman(inst.human_fi, s) for inst, s in zip(instances, scores)])


def plausibility(params, instances, config, rng, scores=None):
    if scores is None:
        method = config.explainer if config.explainer != "auto" else "loo"
        scores = explanation_scores(params, instances, method, config, rng)
    return float(np.mean(plausibility_per_instance(instances, scores)))


def top_fraction_mask(scores, fraction):
    """Keep-mask of the ceil(fraction * n) highest-scored features.

    Ties break toward the lower index; at least one feature is selected.
    """
    n = len(scores)
    k = max(1, math.ceil(fraction * n))
    order = np.argsort(-np.asarray(scores), kind="stable")
    mask = np.zeros(n)
    mask[order[:k]] = 1.0
    return mask


def faithfulness_per_instance(params, instances, scores, kind, config):
    """Per-instance mean over sparsity levels of p(y_hat|x) - p(y_hat|masked x)."""
    if kind not in ("suff", "comp"):
        raise ContractError("kind must be 'suff' or 'comp'")
    objects, questions, _ = _stacked(instances)
    probs = _batched_probs(params, objects, questions, config.batch_size)
    preds = np.argmax(probs, axis=-1)
    base = probs[np.arange(len(instances)), preds]
    total = np.zeros(len(instances))
    for level in config.sparsity_levels:
        keep = np.stack([top_fraction_mask(s, level) for s in scores])
        if kind == "comp":
            keep = 1.0 - keep
        x_m = replace_batch(objects, keep, config.replace)
        probs_m = _batched_probs(params, x_m, questions, config.batch_size)
        total += base - probs_m[np.arange(len(instances)), preds]
    return total / len(config.sparsity_levels)


def faithfulness(params, instances, config, kind, rng, scores=None):
    if scores is None:
        method = config.explainer if config.explainer != "auto" else "loo"
        scores = explanation_scores(params, instances, method, config, rng)
    return float(np.mean(faithfulness_per_instance(params, instances, scores, kind, config)))


def choose_explainer(params, dev_instances, config, rng):
    """Fix the metric explainer: explicit config, or best Suff/Comp on Dev."""
    if config.explainer != "auto":
        return config.explainer
    sample = dev_instances[:config.select_subsample]
    reports = {}
    for method in config.explainer_candidates:
        scores = explanation_scores(params, sample, method, config, rng)
        reports[method] = (
            float(np.mean(faithfulness_per_instance(params, sample, scores, "suff", config))),
            float(np.mean(faithfulness_per_instance(params, sample, scores, "comp", config))),
        )
    return select_best_explainer(reports)


def evaluate_model(params, splits, config, rng, model_id="model"):
    """Full MetricsReport over the four splits.

    splits: dict with train/dev/test_id/test_ood instance lists. Accuracy is
    reported on both test splits; RRR, explanation metrics, and confidence on
    Test-ID (the in-distribution test data); per-datapoint records cover both
    test splits for the analysis layer.
    """
    for name in ("dev", "test_id", "test_ood"):
        if not splits.get(name):
            raise ContractError(f"split {name!r} is empty")
    explainer = choose_explainer(params, splits["dev"], config, rng)

    id_acc = accuracy(params, splits["test_id"], config.batch_size)
    ood_acc = accuracy(params, splits["test_ood"], config.batch_size)
    suff_val, excluded = rrr_suff(params, splits["test_id"], config.replace, config.batch_size)
    unc_val, _ = rrr_unc(params, splits["test_id"], config.replace, config.batch_size)
    inv_val, _ = rrr_inv(params, splits["test_id"], rng, config.replace,
                         config.rrr_inv_draws, config.batch_size)

    per_datapoint = []
    plaus_id = faith_suff_id = faith_comp_id = 0.0
    for split_name in ("test_id", "test_ood"):
        insts = splits[split_name]
        scores = explanation_scores(params, insts, explainer, config, rng)
        plaus = plausibility_per_instance(insts, scores)
        f_suff = faithfulness_per_instance(params, insts, scores, "suff", config)
        f_comp = faithfulness_per_instance(params, insts, scores, "comp", config)
        objects, questions, labels = _stacked(insts)
        probs = _batched_probs(params, objects, questions, config.batch_size)
        preds = np.argmax(probs, axis=-1)
        conf = probs[np.arange(len(insts)), preds]
        if split_name == "test_id":
            plaus_id = float(np.mean(plaus))
            faith_suff_id = float(np.mean(f_suff))
            faith_comp_id = float(np.mean(f_comp))
        for j, inst in enumerate(insts):
            per_datapoint.append({
                "model_id": model_id,
                "instance_id": inst.id,
                "split": split_name,
                "correct": int(preds[j] == labels[j]),
                "plausibility": float(plaus[j]),
                "suff": float(f_suff[j]),
                "comp": float(f_comp[j]),
                "confidence": float(conf[j]),
            })

    return MetricsReport(
        id_acc=id_acc,
        ood_acc=ood_acc,
        rrr_suff=suff_val,
        rrr_inv=inv_val,
        rrr_unc=unc_val,
        plausibility=plaus_id,
        faith_suff=faith_suff_id,
        faith_comp=faith_comp_id,
        mean_confidence=mean_confidence(params, splits["test_id"], config.batch_size),
        n_rrr_excluded=excluded,
        explainer=explainer,
        per_datapoint=per_datapoint,
    )
