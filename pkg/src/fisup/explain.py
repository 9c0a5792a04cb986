"""Model feature-importance explanations.

Every method scores the n object rows of one instance against a target class
logit (predicted or ground truth; logits rather than probabilities for
numerical stability). Gradient methods differentiate the logit w.r.t. the
object features; perturbation methods compare logits under Replace-masked
inputs. All methods support a compute budget k: only k features are scored
(chosen uniformly without replacement), the rest carry score 0 and
explained_mask 0.

The ``differentiable`` path keeps scores as graph nodes so they can appear in
training losses; reference outputs f(x) and the null output f(x_empty) are
treated as constants there (stop-gradient).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import comb

from . import autodiff as ad
from .model import forward_graph, params_to_nodes
from .replace import replace
from .validation import ContractError

METHODS = ("vanilla_grad", "expected_grad", "attention", "loo", "koi", "shap", "avg_effect")
PERTURB_METHODS = ("loo", "koi", "shap", "avg_effect")


class ExplanationError(RuntimeError):
    """Structural failure while computing an explanation."""


@dataclass
class FIConfig:
    method: str = "vanilla_grad"
    class_mode: str = "gt"          # "gt" or "pred"
    budget: int = 1                 # model evaluations per explanation
    replace: str = "all_neg_ones"
    samples: int = 1                # expected_grad / avg_effect draws
    additivity_weight: float = 1e6


@dataclass
class ExplanationVector:
    scores: np.ndarray
    method: str
    target_class: int
    class_mode: str
    budget: int
    explained_mask: np.ndarray
    graph: ad.Node | None = None    # (1, n) node when differentiable


def _onehot(idx, width):
    out = np.zeros((len(idx), width))
    out[np.arange(len(idx)), idx] = 1.0
    return out


def _explained_subset(n, budget, rng):
    if budget >= n:
        return np.arange(n)
    if rng is None:
        raise ContractError("budgeted explanations need an rng to pick features")
    return np.sort(rng.choice(n, size=budget, replace=False))


def _replace_rows(x, keep, strategy, batch, rng):
    return replace(x, keep, strategy=strategy, batch=batch, rng=rng)


# ---------------------------------------------------------------------------
# batched cores (B instances at once); used by both the public API and the
# training objectives


def batch_vanilla_grad(pnodes, objects_leaf, questions, class_onehots):
    """Sum over feature dims of d logit_class / d objects. (B, n) node."""
    out = forward_graph(pnodes, objects_leaf, questions)
    picked = ad.asum(ad.pick(out["logits"], class_onehots))
    g = ad.gradient(picked, [objects_leaf], create_graph=True)[objects_leaf]
    return ad.asum(g, axis=2)


def batch_expected_grad(pnodes, objects, questions, class_onehots, samples,
                        strategy, rng, batch_ctx=None):
    """Monte Carlo integrated gradients with Replace-drawn baselines."""
    if samples < 1:
        raise ContractError("expected_grad needs samples >= 1")
    objects = np.asarray(objects, dtype=np.float64)
    b, n, d = objects.shape
    ctx = batch_ctx if batch_ctx is not None else list(objects)
    total = None
    for _ in range(samples):
        baseline = np.stack([
            _replace_rows(objects[i], np.zeros(n), strategy, ctx, rng)
            for i in range(b)
        ])
        alpha = rng.random(size=(b, 1, 1))
        interp = ad.leaf(baseline + alpha * (objects - baseline))
        out = forward_graph(pnodes, interp, questions)
        picked = ad.asum(ad.pick(out["logits"], class_onehots))
        g = ad.gradient(picked, [interp], create_graph=True)[interp]
        contrib = ad.asum(ad.mul(g, ad.constant(objects - baseline)), axis=2)
        total = contrib if total is None else ad.add(total, contrib)
    return ad.mul(total, 1.0 / samples)


def batch_attention(pnodes, objects, questions):
    obj = objects if isinstance(objects, ad.Node) else ad.constant(objects)
    return forward_graph(pnodes, obj, questions)["attention"]


def _slot_logits(pnodes, slot_objects, questions, class_onehots):
    out = forward_graph(pnodes, ad.constant(slot_objects), questions)
    return ad.pick(out["logits"], class_onehots)  # (B,)


def _scatter(cols, slots, b, n):
    """Sum (B,) slot values into (B, n) via constant placement masks."""
    total = None
    for val, positions in zip(cols, slots):
        mask = np.zeros((b, n))
        mask[np.arange(b), positions] = 1.0
        term = ad.mul(ad.reshape(val, (b, 1)), ad.constant(mask))
        total = term if total is None else ad.add(total, term)
    return total


def batch_loo(pnodes, objects, questions, class_onehots, explained, strategy, rng):
    """score_j = logit(x) - logit(x with row j replaced); reference is constant."""
    objects = np.asarray(objects, dtype=np.float64)
    b, n, _ = objects.shape
    ctx = list(objects)
    ref = ad.stop_gradient(_slot_logits(pnodes, objects, questions, class_onehots))
    cols, slots = [], []
    for t in range(explained.shape[1]):
        keep = np.ones((b, n))
        keep[np.arange(b), explained[:, t]] = 0.0
        pert = np.stack([_replace_rows(objects[i], keep[i], strategy, ctx, rng)
                         for i in range(b)])
        logit = _slot_logits(pnodes, pert, questions, class_onehots)
        cols.append(ad.add(ref, ad.mul(logit, -1.0)))
        slots.append(explained[:, t])
    return _scatter(cols, slots, b, n)


def batch_koi(pnodes, objects, questions, class_onehots, explained, strategy, rng):
    """score_j = logit(only row j kept) - logit(nothing kept); null is constant."""
    objects = np.asarray(objects, dtype=np.float64)
    b, n, _ = objects.shape
    ctx = list(objects)
    null_in = np.stack([_replace_rows(objects[i], np.zeros(n), strategy, ctx, rng)
                        for i in range(b)])
    null = ad.stop_gradient(_slot_logits(pnodes, null_in, questions, class_onehots))
    cols, slots = [], []
    for t in range(explained.shape[1]):
        keep = np.zeros((b, n))
        keep[np.arange(b), explained[:, t]] = 1.0
        pert = np.stack([_replace_rows(objects[i], keep[i], strategy, ctx, rng)
                         for i in range(b)])
        logit = _slot_logits(pnodes, pert, questions, class_onehots)
        cols.append(ad.add(logit, ad.mul(null, -1.0)))
        slots.append(explained[:, t])
    return _scatter(cols, slots, b, n)


# --- kernel SHAP -------------------------------------------------------------


def shapley_kernel(n, size):
    return (n - 1) / (comb(n, size, exact=True) * size * (n - size))


def _kernel_size_dist(n):
    sizes = np.arange(1, n)
    mass = np.array([comb(n, m, exact=True) * shapley_kernel(n, m) for m in sizes])
    return sizes, mass / mass.sum()


def sample_kernel_masks(n, count, rng):
    """Masks with |s| drawn proportional to total kernel mass per size."""
    if n == 1:
        return np.ones((count, 1))
    sizes, p = _kernel_size_dist(n)
    out = np.zeros((count, n))
    for i in range(count):
        m = int(rng.choice(sizes, p=p))
        out[i, rng.choice(n, size=m, replace=False)] = 1.0
    return out


def exhaustive_masks(n):
    """Every proper nonempty mask over n features, ordered by binary code."""
    if n > 16:
        raise ContractError("exhaustive mask enumeration limited to n <= 16")
    codes = np.arange(1, 2 ** n - 1)
    return ((codes[:, None] >> np.arange(n)) & 1).astype(np.float64)


def _shap_system(sub_masks, n_expl, additivity_weight):
    """Design matrix, weights, and the scatter solve matrix C = (S'WS)^-1 S'W."""
    masks = np.concatenate([sub_masks, np.ones((1, n_expl))], axis=0)
    sizes = sub_masks.sum(axis=1).astype(int)
    if n_expl == 1:
        w = np.ones(len(sub_masks))
    else:
        w = np.array([shapley_kernel(n_expl, m) for m in sizes])
    weights = np.concatenate([w, [additivity_weight]])
    a = masks.T @ (weights[:, None] * masks)
    if np.linalg.matrix_rank(a) < n_expl:
        return None
    return np.linalg.solve(a, masks.T * weights[None, :]), masks


def batch_shap(pnodes, objects, questions, class_onehots, explained, strategy, rng,
               budget, additivity_weight, exhaustive=False):
    """Differentiable Kernel SHAP: weighted least squares on mask regressions.

    One slot forward per mask row (shared across the batch); the per-instance
    solve matrix is constant, so the explanation is a matmul of logit
    differences and stays differentiable w.r.t. the parameters.
    """
    objects = np.asarray(objects, dtype=np.float64)
    b, n, _ = objects.shape
    n_expl = explained.shape[1]
    ctx = list(objects)

    systems, full_masks = [], []
    for i in range(b):
        if exhaustive:
            sub = exhaustive_masks(n_expl)
        else:
            sub = sample_kernel_masks(n_expl, budget, rng)
        sys_i = _shap_system(sub, n_expl, additivity_weight)
        if sys_i is None:  # singular after column dropping: resample once
            sub = sample_kernel_masks(n_expl, budget, rng)
            sys_i = _shap_system(sub, n_expl, additivity_weight)
        if sys_i is None:
            raise ExplanationError("S^T W S singular after resampling masks")
        systems.append(sys_i[0])
        full_masks.append(sys_i[1])

    n_rows = full_masks[0].shape[0]
    if any(fm.shape[0] != n_rows for fm in full_masks):
        raise ExplanationError("mask counts must agree across the batch")

    null_in = np.stack([_replace_rows(objects[i], np.zeros(n), strategy, ctx, rng)
                        for i in range(b)])
    null = ad.stop_gradient(_slot_logits(pnodes, null_in, questions, class_onehots))

    ys = []
    for t in range(n_rows):
        keep = np.zeros((b, n))
        for i in range(b):
            keep[i, explained[i]] = full_masks[i][t]
        pert = np.stack([_replace_rows(objects[i], keep[i], strategy, ctx, rng)
                         for i in range(b)])
        logit = _slot_logits(pnodes, pert, questions, class_onehots)
        if t == n_rows - 1:  # additivity row references the full-output constant
            logit = ad.stop_gradient(logit)
        ys.append(ad.reshape(ad.add(logit, ad.mul(null, -1.0)), (b, 1)))
    y = ad.reshape(ad.concat(ys, axis=1), (b, n_rows, 1))

    c = np.stack(systems)                   # (B, n_expl, n_rows)
    phi = ad.matmul(ad.constant(c), y)      # (B, n_expl, 1)
    placement = np.zeros((b, n, n_expl))
    for i in range(b):
        placement[i, explained[i], np.arange(n_expl)] = 1.0
    return ad.reshape(ad.matmul(ad.constant(placement), phi), (b, n))


def batch_avg_effect(pnodes, objects, questions, class_onehots, explained,
                     strategy, rng, samples=1):
    """Mean logit difference between paired masks s1/s0 per explained feature."""
    objects = np.asarray(objects, dtype=np.float64)
    b, n, _ = objects.shape
    ctx = list(objects)
    total = None
    for _ in range(samples):
        cols, slots = [], []
        for t in range(explained.shape[1]):
            base = np.zeros((b, n))
            for i in range(b):
                base[i, explained[i]] = (rng.random(explained.shape[1]) < 0.5)
            s1, s0 = base.copy(), base.copy()
            s1[np.arange(b), explained[:, t]] = 1.0
            s0[np.arange(b), explained[:, t]] = 0.0
            x1 = np.stack([_replace_rows(objects[i], s1[i], strategy, ctx, rng) for i in range(b)])
            x0 = np.stack([_replace_rows(objects[i], s0[i], strategy, ctx, rng) for i in range(b)])
            l1 = _slot_logits(pnodes, x1, questions, class_onehots)
            l0 = _slot_logits(pnodes, x0, questions, class_onehots)
            cols.append(ad.add(l1, ad.mul(l0, -1.0)))
            slots.append(explained[:, t])
        term = _scatter(cols, slots, b, n)
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, 1.0 / samples)


def _masked_inputs(x, masks, strategy):
    """Vectorized Replace for the two constant strategies. masks: (M, n)."""
    fill = 0.0 if strategy == "all_zeros" else -1.0
    return np.where(masks[:, :, None] > 0, x[None], fill)


def avg_effect_scores(params, objects, question, target_class, samples,
                      explained=None, strategy="all_neg_ones", rng=None, chunk=8192):
    """Monte Carlo average-effect scores, vectorized over mask draws.

    Only the constant Replace strategies are supported here; the graph-based
    path handles the stochastic ones.
    """
    if strategy not in ("all_zeros", "all_neg_ones"):
        raise ContractError("fast avg_effect path supports constant Replace strategies only")
    from .model import forward_batch

    objects = np.asarray(objects, dtype=np.float64)
    n = objects.shape[0]
    explained = np.arange(n) if explained is None else np.asarray(explained)
    rng = rng if rng is not None else np.random.default_rng(0)

    def logits_for(masks):
        xs = _masked_inputs(objects, masks, strategy)
        qs = np.broadcast_to(question, (len(masks), len(question)))
        outs = []
        for lo in range(0, len(xs), chunk):
            outs.append(forward_batch(params, xs[lo:lo + chunk], qs[lo:lo + chunk])["logits"])
        return np.concatenate(outs)[:, target_class]

    scores = np.zeros(n)
    for j in explained:
        base = np.zeros((samples, n))
        base[:, explained] = rng.random((samples, len(explained))) < 0.5
        s1, s0 = base.copy(), base.copy()
        s1[:, j] = 1.0
        s0[:, j] = 0.0
        scores[j] = np.mean(logits_for(s1) - logits_for(s0))
    return scores


def batch_explain(pnodes, objects, questions, class_ids, fi, rng, objects_leaf=None):
    """Training-facing entry: (B, n) score node plus the explained mask array.

    `objects_leaf` supplies an existing graph leaf for the gradient methods so
    their input-gradient ties into the caller's graph.
    """
    objects = np.asarray(objects if objects_leaf is None else objects_leaf.value,
                         dtype=np.float64)
    b, n, _ = objects.shape
    onehots = _onehot(np.asarray(class_ids, dtype=int), pnodes["w_cls2"].shape[1])
    explained_mask = np.ones((b, n))

    if fi.method == "vanilla_grad":
        leaf_node = objects_leaf if objects_leaf is not None else ad.leaf(objects)
        scores = batch_vanilla_grad(pnodes, leaf_node, questions, onehots)
    elif fi.method == "expected_grad":
        scores = batch_expected_grad(pnodes, objects, questions, onehots,
                                     max(fi.samples, 1), fi.replace, rng)
    elif fi.method == "attention":
        scores = batch_attention(pnodes, objects, questions)
    elif fi.method in PERTURB_METHODS:
        budget = fi.budget if fi.budget else n
        if not 1 <= budget:
            raise ContractError("budget must be >= 1")
        n_expl = min(budget, n)
        if fi.method == "avg_effect":
            n_expl = min(n, max(1, budget // 2))
        explained = np.stack([_explained_subset(n, n_expl, rng) for _ in range(b)])
        explained_mask = np.zeros((b, n))
        for i in range(b):
            explained_mask[i, explained[i]] = 1.0
        if fi.method == "loo":
            scores = batch_loo(pnodes, objects, questions, onehots, explained, fi.replace, rng)
        elif fi.method == "koi":
            scores = batch_koi(pnodes, objects, questions, onehots, explained, fi.replace, rng)
        elif fi.method == "shap":
            scores = batch_shap(pnodes, objects, questions, onehots, explained,
                                fi.replace, rng, budget, fi.additivity_weight)
        else:
            scores = batch_avg_effect(pnodes, objects, questions, onehots, explained,
                                      fi.replace, rng, samples=max(fi.samples, 1))
    else:
        raise ContractError(f"unknown FI method {fi.method!r}")
    return scores, explained_mask


# ---------------------------------------------------------------------------
# single-instance public API


def _resolve_class(params, objects, question, target_class):
    if target_class is not None:
        return int(target_class)
    from .model import forward
    dist, _ = forward(params, objects, question)
    return dist.predicted


def _finish(scores_node, method, target_class, class_mode, budget, explained_mask,
            differentiable):
    return ExplanationVector(
        scores=scores_node.value[0].copy(),
        method=method,
        target_class=target_class,
        class_mode=class_mode,
        budget=budget,
        explained_mask=explained_mask[0],
        graph=scores_node if differentiable else None,
    )


def vanilla_grad(params, objects, question, target_class=None, differentiable=False,
                 pnodes=None, class_mode="pred"):
    target = _resolve_class(params, objects, question, target_class)
    pn = pnodes if pnodes is not None else params_to_nodes(params, trainable=differentiable)
    fi = FIConfig(method="vanilla_grad", class_mode=class_mode)
    scores, mask = batch_explain(pn, np.asarray(objects)[None],
                                 np.asarray(question)[None], [target], fi, rng=None)
    return _finish(scores, "vanilla_grad", target, class_mode, 1, mask, differentiable)


def expected_grad(params, objects, question, target_class=None, samples=1,
                  replace_strategy="all_neg_ones", rng=None, differentiable=False,
                  pnodes=None, class_mode="pred"):
    if samples < 1:
        raise ContractError("expected_grad needs samples >= 1")
    target = _resolve_class(params, objects, question, target_class)
    pn = pnodes if pnodes is not None else params_to_nodes(params, trainable=differentiable)
    fi = FIConfig(method="expected_grad", samples=samples, replace=replace_strategy,
                  class_mode=class_mode)
    scores, mask = batch_explain(pn, np.asarray(objects)[None],
                                 np.asarray(question)[None], [target], fi,
                                 rng=rng if rng is not None else np.random.default_rng(0))
    return _finish(scores, "expected_grad", target, class_mode, samples, mask, differentiable)


def attention_explain(params, objects, question):
    pn = params_to_nodes(params, trainable=False)
    scores = batch_attention(pn, np.asarray(objects)[None], np.asarray(question)[None])
    n = np.asarray(objects).shape[0]
    return _finish(scores, "attention", -1, "none", 0, np.ones((1, n)), False)


def perturb_explain(method, params, objects, question, target_class=None, budget=None,
                    replace_strategy="all_neg_ones", rng=None, differentiable=False,
                    exhaustive=False, additivity_weight=1e6, samples=1,
                    pnodes=None, class_mode="pred"):
    if method not in PERTURB_METHODS:
        raise ContractError(f"method must be one of {PERTURB_METHODS}")
    objects = np.asarray(objects, dtype=np.float64)
    n = objects.shape[0]
    # a full explanation costs n evaluations, except avg_effect's two per pair
    if budget is None:
        budget = 2 * n if method == "avg_effect" else n
    budget = int(budget)
    if not 1 <= budget:
        raise ContractError("budget must be >= 1")
    if method == "avg_effect" and budget > 2 * n:
        budget = 2 * n
    target = _resolve_class(params, objects, question, target_class)
    pn = pnodes if pnodes is not None else params_to_nodes(params, trainable=differentiable)
    fi = FIConfig(method=method, budget=budget, replace=replace_strategy,
                  samples=samples, additivity_weight=additivity_weight,
                  class_mode=class_mode)
    eff_rng = rng if rng is not None else np.random.default_rng(0)
    if (method == "avg_effect" and not differentiable
            and replace_strategy in ("all_zeros", "all_neg_ones")):
        n_expl = min(n, max(1, budget // 2))
        explained = _explained_subset(n, n_expl, eff_rng)
        scores = avg_effect_scores(params, objects, question, target, samples,
                                   explained=explained, strategy=replace_strategy,
                                   rng=eff_rng)
        mask = np.zeros(n)
        mask[explained] = 1.0
        return ExplanationVector(scores=scores, method=method, target_class=target,
                                 class_mode=class_mode, budget=budget,
                                 explained_mask=mask, graph=None)
    if method == "shap" and exhaustive:
        onehots = _onehot([target], params["w_cls2"].shape[1])
        explained = np.arange(n)[None, :]
        scores = batch_shap(pn, objects[None], np.asarray(question)[None], onehots,
                            explained, replace_strategy, eff_rng, budget,
                            additivity_weight, exhaustive=True)
        mask = np.ones((1, n))
    else:
        scores, mask = batch_explain(pn, objects[None], np.asarray(question)[None],
                                     [target], fi, eff_rng)
    used = budget if method != "shap" else budget + 2
    return _finish(scores, method, target, class_mode, used, mask, differentiable)


def select_best_explainer(reports):
    """Pick the method with the best mean of (-Sufficiency, Comprehensiveness).

    `reports` maps method name -> (suff, comp) measured on Dev; each metric is
    z-normalized across methods before averaging so scales are comparable.
    """
    if not reports:
        raise ContractError("need at least one candidate explainer")
    methods = sorted(reports)
    suff = np.array([reports[m][0] for m in methods], dtype=np.float64)
    comp = np.array([reports[m][1] for m in methods], dtype=np.float64)

    def z(v):
        sd = v.std()
        return np.zeros_like(v) if sd == 0 else (v - v.mean()) / sd

    score = (-z(suff) + z(comp)) / 2.0
    return methods[int(np.argmax(score))]
