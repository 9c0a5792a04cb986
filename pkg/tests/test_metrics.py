import numpy as np
import pytest

from fisup import metrics as mt
from fisup import model as m
from fisup.data import GeneratorConfig, apply_shift_split, apply_split_spec, \
    binarize_dataset, generate_dataset
from fisup.data.splits import split_view
from fisup.validation import ContractError


@pytest.fixture(scope="module")
def world():
    gen = GeneratorConfig(size=900)
    data = binarize_dataset(generate_dataset(gen, seed=0), tau=0.55)
    spec = apply_shift_split(data, seed=0,
                             sizes={"train": 260, "dev": 80, "test_id": 60, "test_ood": 60})
    kept = apply_split_spec(data, spec)
    splits = {s: split_view(kept, s) for s in ("train", "dev", "test_id", "test_ood")}
    mcfg = m.ModelConfig(feature_dim=gen.feature_dim, question_dim=gen.question_dim,
                         n_answers=len(gen.answers), hidden_dim=16)
    params = m.init_params(mcfg, seed=1)
    return gen, splits, mcfg, params


def constant_model(mcfg, logits):
    params = m.init_params(mcfg, seed=2)
    params["w_cls2"][:] = 0.0
    params["b_cls2"][:] = np.asarray(logits)[None]
    return params


def oracle_reader_params(mcfg):
    """A model whose prediction never changes: constant max-margin output."""
    logits = np.zeros(mcfg.n_answers)
    logits[3] = 50.0
    return constant_model(mcfg, logits)


# --- accuracy ----------------------------------------------------------------

def test_accuracy_perfect_and_permutation_invariant(world):
    gen, splits, mcfg, params = world
    insts = splits["test_id"]
    label0 = insts[0].label
    always_right = constant_model(mcfg, np.eye(gen_answers(gen))[label0] * 50)
    subset = [i for i in insts if i.label == label0]
    assert mt.accuracy(always_right, subset) == 1.0
    rng = np.random.default_rng(0)
    shuffled = [insts[k] for k in rng.permutation(len(insts))]
    assert mt.accuracy(params, insts) == mt.accuracy(params, shuffled)


def gen_answers(gen):
    return len(gen.answers)


def test_constant_predictor_near_chance_on_balanced_labels(world):
    gen, splits, mcfg, params = world
    # build a 12-class balanced synthetic split from existing instances
    from dataclasses import replace as dc_replace
    insts = []
    pool = splits["train"]
    for lbl in range(12):
        for j in range(4):
            insts.append(dc_replace(pool[12 * j + lbl], label=lbl))
    const = constant_model(mcfg, np.linspace(1.0, 0.0, 12))
    assert mt.accuracy(const, insts) == pytest.approx(1.0 / 12.0)


def test_accuracy_empty_split_rejected(world):
    gen, splits, mcfg, params = world
    with pytest.raises(ContractError):
        mt.accuracy(params, [])


# --- RRR ---------------------------------------------------------------------

def test_rrr_suff_equals_accuracy_when_all_masks_full(world):
    gen, splits, mcfg, params = world
    from dataclasses import replace as dc_replace
    full = [dc_replace(i, important_mask=np.ones(i.n_objects),
                       human_fi=np.ones(i.n_objects)) for i in splits["test_id"]]
    value, excluded = mt.rrr_suff(params, full)
    assert excluded == 0
    assert value == mt.accuracy(params, full)


def test_rrr_suff_constant_predictor_matches_accuracy(world):
    gen, splits, mcfg, _ = world
    const = oracle_reader_params(mcfg)
    included = [i for i in splits["test_id"] if i.important_mask.any()]
    value, excluded = mt.rrr_suff(const, splits["test_id"])
    assert excluded == len(splits["test_id"]) - len(included)
    assert value == mt.accuracy(const, included)


def test_rrr_excluded_counted(world):
    gen, splits, mcfg, params = world
    insts = splits["test_id"]
    n_zero = sum(1 for i in insts if not i.important_mask.any())
    _, excluded = mt.rrr_suff(params, insts)
    assert excluded == n_zero


def test_rrr_unc_bounds_and_fixed_points(world):
    gen, splits, mcfg, params = world
    y = gen_answers(gen)
    uniform = constant_model(mcfg, np.zeros(y))
    val, _ = mt.rrr_unc(uniform, splits["test_id"])
    assert val == pytest.approx(1.0 / y, abs=1e-12)
    confident = oracle_reader_params(mcfg)
    val_hi, _ = mt.rrr_unc(confident, splits["test_id"])
    assert val_hi == pytest.approx(1.0, abs=1e-3)
    val_mid, _ = mt.rrr_unc(params, splits["test_id"])
    assert 1.0 / y - 1e-12 <= val_mid <= 1.0


def test_rrr_unc_hand_mean():
    # two "instances" with predicted-class probabilities 0.7 and 0.5 -> 0.6
    assert np.mean([0.7, 0.5]) == pytest.approx(0.6)


def test_rrr_inv_constant_model_is_one(world):
    gen, splits, mcfg, _ = world
    const = oracle_reader_params(mcfg)
    val, _ = mt.rrr_inv(const, splits["test_id"], np.random.default_rng(0))
    assert val == 1.0


def test_rrr_inv_full_mask_contributes_one(world):
    gen, splits, mcfg, params = world
    from dataclasses import replace as dc_replace
    full = [dc_replace(i, important_mask=np.ones(i.n_objects)) for i in splits["test_id"][:10]]
    val, _ = mt.rrr_inv(params, full, np.random.default_rng(1))
    assert val == 1.0


def test_rrr_inv_deterministic_given_seed(world):
    gen, splits, mcfg, params = world
    a, _ = mt.rrr_inv(params, splits["test_id"], np.random.default_rng(7))
    b, _ = mt.rrr_inv(params, splits["test_id"], np.random.default_rng(7))
    assert a == b
    assert 0.0 <= a <= 1.0


# --- plausibility ------------------------------------------------------------

def test_spearman_basics():
    assert mt.spearman([1, 2, 3], [10, 20, 30]) == 1.0
    assert mt.spearman([1, 2, 3], [3, 2, 1]) == -1.0
    assert mt.spearman([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)
    assert mt.spearman([1, 1, 1], [1, 3, 2]) == 0.0


def test_plausibility_identity_and_reverse(world):
    gen, splits, mcfg, params = world
    insts = splits["test_id"][:20]
    identity = np.stack([i.human_fi for i in insts])
    assert mt.plausibility(params, insts, mt.EvalConfig(), None, scores=identity) == pytest.approx(1.0)
    # strictly reversed ranks need distinct values
    distinct = [i for i in insts if len(np.unique(i.human_fi)) == i.n_objects]
    if distinct:
        rev = np.stack([-i.human_fi for i in distinct])
        val = mt.plausibility(params, distinct, mt.EvalConfig(), None, scores=rev)
        assert val == pytest.approx(-1.0)


# --- faithfulness ------------------------------------------------------------

def test_top_fraction_mask_rounding_and_ties():
    mask = mt.top_fraction_mask(np.array([0.5, 0.5, 0.1]), 0.10)  # ceil(0.3)=1
    np.testing.assert_array_equal(mask, [1, 0, 0])  # tie -> lower index
    mask = mt.top_fraction_mask(np.array([0.1, 0.9, 0.5]), 0.50)  # ceil(1.5)=2
    np.testing.assert_array_equal(mask, [0, 1, 1])


def test_faithfulness_constant_model_zero(world):
    gen, splits, mcfg, _ = world
    const = oracle_reader_params(mcfg)
    cfg = mt.EvalConfig()
    insts = splits["test_id"][:30]
    scores = np.random.default_rng(3).normal(size=(len(insts), insts[0].n_objects))
    assert mt.faithfulness(const, insts, cfg, "suff", None, scores=scores) == 0.0
    assert mt.faithfulness(const, insts, cfg, "comp", None, scores=scores) == 0.0


def test_faithfulness_suff_near_zero_for_explainer_that_finds_the_model_feature(world):
    gen, splits, mcfg, params = world
    cfg = mt.EvalConfig()
    insts = splits["test_id"][:40]
    rng = np.random.default_rng(4)
    # loo scores rank exactly the features whose removal changes the output
    scores = mt.explanation_scores(params, insts, "loo", cfg, rng)
    suff = mt.faithfulness(params, insts, cfg, "suff", rng, scores=scores)
    rand_scores = np.random.default_rng(5).normal(size=scores.shape)
    suff_rand = mt.faithfulness(params, insts, cfg, "suff", rng, scores=rand_scores)
    assert suff <= suff_rand + 1e-9  # informed explainer retains confidence better


def test_explanation_scores_unknown_method(world):
    gen, splits, mcfg, params = world
    with pytest.raises(ContractError):
        mt.explanation_scores(params, splits["dev"][:2], "nope", mt.EvalConfig(), None)


# --- report ------------------------------------------------------------------

def test_evaluate_model_bounds_and_determinism(world):
    gen, splits, mcfg, params = world
    cfg = mt.EvalConfig(select_subsample=30)
    r1 = mt.evaluate_model(params, splits, cfg, np.random.default_rng(9), model_id="m0")
    r2 = mt.evaluate_model(params, splits, cfg, np.random.default_rng(9), model_id="m0")
    assert r1.to_dict() == r2.to_dict()
    assert 0.0 <= r1.id_acc <= 1.0 and 0.0 <= r1.ood_acc <= 1.0
    assert 0.0 <= r1.rrr_suff <= 1.0 and 0.0 <= r1.rrr_inv <= 1.0
    assert 1.0 / gen_answers(gen) - 1e-12 <= r1.rrr_unc <= 1.0
    assert -1.0 <= r1.plausibility <= 1.0
    assert -1.0 <= r1.faith_suff <= 1.0 and -1.0 <= r1.faith_comp <= 1.0
    assert r1.explainer in cfg.explainer_candidates
    assert len(r1.per_datapoint) == len(splits["test_id"]) + len(splits["test_ood"])
    rec = r1.per_datapoint[0]
    assert set(rec) == {"model_id", "instance_id", "split", "correct", "plausibility",
                        "suff", "comp", "confidence"}


def test_constant_model_report_fixed_points(world):
    gen, splits, mcfg, _ = world
    const = oracle_reader_params(mcfg)
    cfg = mt.EvalConfig(explainer="loo", select_subsample=20)
    rep = mt.evaluate_model(const, splits, cfg, np.random.default_rng(10))
    assert rep.rrr_inv == 1.0
    assert rep.faith_suff == 0.0
    assert rep.faith_comp == 0.0
    assert rep.rrr_unc == pytest.approx(rep.mean_confidence, abs=1e-12)
