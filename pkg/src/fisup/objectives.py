"""Training objectives: task loss, the four supervision terms, and presets.

The composite is lambda_task * CE + lambda_suff * Suff + lambda_unc * Unc +
lambda_align * Align + lambda_inv_fi * Inv-FI (+ the data-augmentation
invariance term when enabled). Instances whose binarized importance mask is
all zeros are supervision-ineligible: the human-supervised terms contribute 0
for them and only the task loss applies. Suff with the random source is
unsupervised (random keep-masks) and applies to every instance.

Zero-weight terms are skipped entirely, so a preset with all supervision
weights at zero consumes exactly the same rng stream as the plain baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace as dc_replace

import numpy as np

from . import autodiff as ad
from .explain import FIConfig, batch_explain
from .model import forward_graph
from .replace import replace_batch, union_mask
from .validation import ContractError

PROB_CLAMP = 1e-12
NORM_EPS = 1e-30
TERMS = ("task", "suff", "unc", "align", "inv_fi", "inv_da")
SUPERVISED_TERMS = ("suff", "unc", "align", "inv_fi", "inv_da")


@dataclass
class ObjectiveConfig:
    preset: str = "baseline"
    lambdas: dict = field(default_factory=lambda: {"task": 1.0})
    suff_source: str = "human"            # "human" | "random"
    replace: str = "all_neg_ones"
    suff_replace: str | None = None       # per-term override (shuffle / gaussian composites)
    fi: FIConfig = field(default_factory=lambda: FIConfig(method="vanilla_grad", class_mode="gt"))
    inv_fi_style: str = "l1_normalized"   # "l1_normalized" | "l2_raw"
    random_supervision: tuple = ()        # terms fed frozen permuted human FI
    ds_keep_prob: float = 0.5
    du_add_prob: float = 0.5

    def weight(self, term):
        return float(self.lambdas.get(term, 0.0))

    def validate(self):
        if self.weight("task") <= 0:
            raise ContractError("the task term must have positive weight")
        for term in self.lambdas:
            if term not in TERMS:
                raise ContractError(f"unknown objective term {term!r}")
            if self.lambdas[term] < 0:
                raise ContractError("term weights must be nonnegative")
        if self.suff_source not in ("human", "random"):
            raise ContractError("suff_source must be 'human' or 'random'")
        if not set(self.random_supervision) <= set(SUPERVISED_TERMS):
            raise ContractError(f"random_supervision entries must be in {SUPERVISED_TERMS}")
        return self


def presets():
    """Named objective configurations, weight 1 per active term."""
    visfis_lams = {"task": 1.0, "suff": 1.0, "unc": 1.0, "align": 1.0, "inv_fi": 1.0}
    grad_fi = FIConfig(method="vanilla_grad", class_mode="gt")
    table = {
        "baseline": ObjectiveConfig(preset="baseline"),
        "suff-random": ObjectiveConfig(preset="suff-random",
                                       lambdas={"task": 1.0, "suff": 1.0},
                                       suff_source="random"),
        "suff-human": ObjectiveConfig(preset="suff-human",
                                      lambdas={"task": 1.0, "suff": 1.0}),
        "unc": ObjectiveConfig(preset="unc", lambdas={"task": 1.0, "unc": 1.0}),
        "inv-da": ObjectiveConfig(preset="inv-da", lambdas={"task": 1.0, "inv_da": 1.0}),
        "inv-fi": ObjectiveConfig(preset="inv-fi", lambdas={"task": 1.0, "inv_fi": 1.0},
                                  fi=grad_fi),
        "align": ObjectiveConfig(preset="align", lambdas={"task": 1.0, "align": 1.0},
                                 fi=grad_fi),
        "visfis": ObjectiveConfig(preset="visfis", lambdas=dict(visfis_lams), fi=grad_fi),
        # composites from prior work: unnormalized l2 gradient penalty, plus a
        # sufficiency term under shuffle / gaussian replacement respectively
        "simpson": ObjectiveConfig(preset="simpson", lambdas={"task": 1.0, "inv_fi": 1.0},
                                   fi=grad_fi, inv_fi_style="l2_raw"),
        "chang": ObjectiveConfig(preset="chang",
                                 lambdas={"task": 1.0, "inv_fi": 1.0, "suff": 1.0},
                                 fi=grad_fi, inv_fi_style="l2_raw",
                                 suff_replace="shuffle"),
        "singla": ObjectiveConfig(preset="singla",
                                  lambdas={"task": 1.0, "inv_fi": 1.0, "suff": 1.0},
                                  fi=grad_fi, inv_fi_style="l2_raw",
                                  suff_replace="gaussian"),
        "visfis-random-supervision": ObjectiveConfig(
            preset="visfis-random-supervision", lambdas=dict(visfis_lams), fi=grad_fi,
            random_supervision=("suff", "unc", "align", "inv_fi")),
    }
    for term in ("suff", "unc", "align", "inv-fi"):
        table[f"visfis-random-{term}"] = ObjectiveConfig(
            preset=f"visfis-random-{term}", lambdas=dict(visfis_lams), fi=grad_fi,
            random_supervision=(term.replace("-", "_"),))
    return table


def get_preset(name, **overrides):
    table = presets()
    if name not in table:
        raise ContractError(f"unknown objective preset {name!r}; "
                            f"known: {sorted(table)}")
    cfg = table[name]
    return dc_replace(cfg, **overrides) if overrides else cfg


def frozen_random_supervision(instances, seed):
    """One permutation per instance, sampled once and reused across epochs."""
    rng = np.random.default_rng(seed)
    return {inst.id: rng.permutation(inst.n_objects) for inst in instances}


# ---------------------------------------------------------------------------
# graph pieces (polymorphic: float arrays in -> floats out, nodes -> nodes)


def _clamped_log(p):
    # max(p, c) written as relu(p - c) + c so it stays inside the op set
    return ad.log(ad.add(ad.relu(ad.add(p, -PROB_CLAMP)), PROB_CLAMP))


def _ce_rows(pnodes, objects, questions, label_onehots):
    out = forward_graph(pnodes, objects, questions)
    picked = ad.pick(out["probs"], label_onehots)
    return ad.mul(_clamped_log(picked), -1.0), out


def _kl_uniform_rows(probs, n_answers):
    mean_log = ad.mul(ad.asum(_clamped_log(probs), axis=-1), 1.0 / n_answers)
    return ad.add(ad.mul(mean_log, -1.0), -np.log(n_answers))


def _kl_rows(p_const, q_probs):
    """KL(p || q) per row with p a constant distribution matrix."""
    p = np.asarray(p_const, dtype=np.float64)
    entropy_term = np.sum(p * np.log(np.maximum(p, PROB_CLAMP)), axis=-1)
    cross = ad.asum(ad.mul(ad.constant(p), _clamped_log(q_probs)), axis=-1)
    return ad.add(ad.mul(cross, -1.0), entropy_term)


def _weighted_mean(rows, weights, batch_size):
    return ad.mul(ad.asum(ad.mul(rows, ad.constant(weights))), 1.0 / batch_size)


def inv_fi_loss(scores, important_mask, style="l1_normalized"):
    """Penalty on explanation mass assigned to unimportant positions.

    l1_normalized: L1 of the unit-normalized scores at unimportant positions
    (0 when the score vector itself is all zeros). l2_raw: plain sum of
    squared unimportant scores, no normalization.
    """
    u = 1.0 - np.asarray(important_mask, dtype=np.float64)
    if style == "l2_raw":
        masked = ad.mul(scores, u)
        return ad.asum(ad.mul(masked, masked), axis=-1)
    norm = ad.sqrt(ad.asum(ad.mul(scores, scores), axis=-1, keepdims=True))
    unit = ad.div(scores, ad.add(norm, NORM_EPS))
    absval = ad.add(ad.relu(unit), ad.relu(ad.mul(unit, -1.0)))
    return ad.asum(ad.mul(absval, u), axis=-1)


def align_loss(scores, human_fi):
    """Negative cosine similarity with the continuous human scores.

    Zero-norm vectors on either side give exactly 0.
    """
    e = np.asarray(human_fi, dtype=np.float64)
    e_norm = np.linalg.norm(e, axis=-1, keepdims=False)
    dot = ad.asum(ad.mul(scores, e), axis=-1)
    s_norm = ad.sqrt(ad.asum(ad.mul(scores, scores), axis=-1))
    denom = ad.mul(ad.add(s_norm, NORM_EPS), np.where(e_norm == 0, 1.0, e_norm))
    zero_guard = (e_norm > 0).astype(np.float64)
    return ad.mul(ad.div(dot, denom), -zero_guard)


# ---------------------------------------------------------------------------
# batched composite


def _stack_batch(batch):
    objects = np.stack([i.objects for i in batch])
    questions = np.stack([i.question for i in batch])
    labels = np.array([i.label for i in batch], dtype=int)
    return objects, questions, labels


def _supervision_arrays(batch, config, rand_sup, term):
    """(human_fi, important_mask, eligibility) honoring random-supervision."""
    fi = np.stack([i.human_fi for i in batch])
    masks = np.stack([i.important_mask for i in batch])
    if rand_sup is not None and term in config.random_supervision:
        perm = np.stack([rand_sup[i.id] for i in batch])
        rows = np.arange(len(batch))[:, None]
        fi = fi[rows, perm]
        masks = masks[rows, perm]
    eligible = np.array([float(i.supervision_eligible) for i in batch])
    return fi, masks, eligible


def composite_loss(pnodes, batch, config, rng, rand_sup=None, n_answers=None):
    """Weighted sum of active terms over one batch.

    Returns (total scalar node, breakdown dict of unweighted per-term means).
    The weighted breakdown sums exactly to the total.
    """
    config.validate()
    if any(i.important_mask is None for i in batch):
        raise ContractError("batch instances must be binarized")
    if config.random_supervision and rand_sup is None:
        raise ContractError("preset uses random supervision but no frozen "
                            "permutations were provided")
    b = len(batch)
    objects, questions, labels = _stack_batch(batch)
    if n_answers is None:
        n_answers = pnodes["w_cls2"].shape[1]
    onehots = np.zeros((b, n_answers))
    onehots[np.arange(b), labels] = 1.0

    obj_leaf = ad.leaf(objects)
    need_input_grad = any(config.weight(t) > 0 for t in ("align", "inv_fi")) \
        and config.fi.method in ("vanilla_grad",)
    task_rows, task_out = _ce_rows(pnodes, obj_leaf if need_input_grad else ad.constant(objects),
                                   questions, onehots)

    terms = {"task": ad.mul(ad.asum(task_rows), 1.0 / b)}

    if config.weight("suff") > 0:
        strategy = config.suff_replace or config.replace
        if config.suff_source == "human":
            fi, masks, eligible = _supervision_arrays(batch, config, rand_sup, "suff")
            keeps, weights = masks, eligible
        else:
            keeps = (rng.random((b, objects.shape[1])) < config.ds_keep_prob).astype(np.float64)
            weights = np.ones(b)
        x_s = replace_batch(objects, keeps, strategy, rng=rng)
        rows, _ = _ce_rows(pnodes, x_s, questions, onehots)
        terms["suff"] = _weighted_mean(rows, weights, b)

    if config.weight("unc") > 0:
        _, masks, eligible = _supervision_arrays(batch, config, rand_sup, "unc")
        x_u = replace_batch(objects, 1.0 - masks, config.replace, rng=rng)
        out = forward_graph(pnodes, ad.constant(x_u), questions)
        rows = _kl_uniform_rows(out["probs"], n_answers)
        terms["unc"] = _weighted_mean(rows, eligible, b)

    if config.weight("inv_da") > 0:
        _, masks, eligible = _supervision_arrays(batch, config, rand_sup, "inv_da")
        u_draw = (rng.random((b, objects.shape[1])) < config.du_add_prob) * (1.0 - masks)
        x_e = replace_batch(objects, masks, config.replace, rng=rng)
        x_eu = replace_batch(objects, union_mask(masks, u_draw), config.replace, rng=rng)
        ref = forward_graph(pnodes, ad.constant(x_e), questions)["probs"].value
        out = forward_graph(pnodes, ad.constant(x_eu), questions)
        rows = _kl_rows(ref, out["probs"])
        terms["inv_da"] = _weighted_mean(rows, eligible, b)

    if config.weight("align") > 0 or config.weight("inv_fi") > 0:
        if config.fi.class_mode == "gt":
            class_ids = labels
        else:
            class_ids = np.argmax(task_out["logits"].value, axis=-1)
        scores, _ = batch_explain(pnodes, objects, questions, class_ids, config.fi, rng,
                                  objects_leaf=obj_leaf if need_input_grad else None)
        if config.weight("align") > 0:
            fi, _, eligible = _supervision_arrays(batch, config, rand_sup, "align")
            rows = align_loss(scores, fi)
            terms["align"] = _weighted_mean(rows, eligible, b)
        if config.weight("inv_fi") > 0:
            _, masks, eligible = _supervision_arrays(batch, config, rand_sup, "inv_fi")
            rows = inv_fi_loss(scores, masks, style=config.inv_fi_style)
            terms["inv_fi"] = _weighted_mean(rows, eligible, b)

    total = None
    breakdown = {}
    for name, node in terms.items():
        w = config.weight(name)
        breakdown[name] = float(node.value)
        weighted = ad.mul(node, w)
        total = weighted if total is None else ad.add(total, weighted)
    return total, breakdown


# ---------------------------------------------------------------------------
# single-instance views of the loss terms


def _single(pnodes_or_params, batch, config, rng=None, n_answers=None):
    from .model import params_to_nodes
    pnodes = (pnodes_or_params if isinstance(next(iter(pnodes_or_params.values())), ad.Node)
              else params_to_nodes(pnodes_or_params, trainable=False))
    rng = rng if rng is not None else np.random.default_rng(0)
    total, breakdown = composite_loss(pnodes, batch, config, rng, n_answers=n_answers)
    return breakdown


def task_loss(params, instance, n_answers=None):
    cfg = ObjectiveConfig(lambdas={"task": 1.0})
    return _single(params, [instance], cfg, n_answers=n_answers)["task"]


def suff_loss(params, instance, source="human", rng=None, replace_strategy="all_neg_ones",
              n_answers=None):
    cfg = ObjectiveConfig(lambdas={"task": 1.0, "suff": 1.0}, suff_source=source,
                          replace=replace_strategy)
    out = _single(params, [instance], cfg, rng=rng, n_answers=n_answers)
    return out["suff"]


def unc_loss(params, instance, replace_strategy="all_neg_ones", n_answers=None):
    cfg = ObjectiveConfig(lambdas={"task": 1.0, "unc": 1.0}, replace=replace_strategy)
    return _single(params, [instance], cfg, n_answers=n_answers)["unc"]


def inv_da_loss(params, instance, rng=None, replace_strategy="all_neg_ones", n_answers=None):
    cfg = ObjectiveConfig(lambdas={"task": 1.0, "inv_da": 1.0}, replace=replace_strategy)
    return _single(params, [instance], cfg, rng=rng, n_answers=n_answers)["inv_da"]
