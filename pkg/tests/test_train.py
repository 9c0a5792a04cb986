import json

import numpy as np
import pytest

from fisup import model as m
from fisup import train as tr
from fisup.data import GeneratorConfig, apply_shift_split, apply_split_spec, \
    binarize_dataset, generate_dataset
from fisup.data.splits import split_view
from fisup.objectives import get_preset
from fisup.validation import ContractError


@pytest.fixture(scope="module")
def small_splits():
    gen = GeneratorConfig(size=1400)
    data = binarize_dataset(generate_dataset(gen, seed=0), tau=0.55)
    spec = apply_shift_split(data, seed=0,
                             sizes={"train": 400, "dev": 120, "test_id": 60, "test_ood": 60})
    kept = apply_split_spec(data, spec)
    mcfg = m.ModelConfig(feature_dim=gen.feature_dim, question_dim=gen.question_dim,
                         n_answers=len(gen.answers), hidden_dim=24)
    return gen, kept, mcfg


def quick_cfg(epochs=4):
    return tr.TrainConfig(epochs=epochs, batch_size=32, learning_rate=3e-3, hidden_dim=24)


def record_bytes(record):
    return json.dumps(record.to_dict(), sort_keys=True).encode()


def test_run_is_deterministic(small_splits):
    gen, kept, mcfg = small_splits
    train, dev = split_view(kept, "train"), split_view(kept, "dev")
    a = tr.train_run(train, dev, mcfg, quick_cfg(), get_preset("baseline"), seed=1)
    b = tr.train_run(train, dev, mcfg, quick_cfg(), get_preset("baseline"), seed=1)
    assert record_bytes(a) == record_bytes(b)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_zero_weight_preset_matches_baseline_trace(small_splits):
    gen, kept, mcfg = small_splits
    train, dev = split_view(kept, "train"), split_view(kept, "dev")
    zeroed = get_preset("visfis")
    zeroed = type(zeroed)(preset="zeroed",
                          lambdas={"task": 1.0, "suff": 0.0, "unc": 0.0,
                                   "align": 0.0, "inv_fi": 0.0},
                          fi=zeroed.fi)
    a = tr.train_run(train, dev, mcfg, quick_cfg(), get_preset("baseline"), seed=2)
    b = tr.train_run(train, dev, mcfg, quick_cfg(), zeroed, seed=2)
    assert [e["task"] for e in a.epoch_losses] == [e["task"] for e in b.epoch_losses]
    assert a.dev_acc_trace == b.dev_acc_trace


def test_task_loss_decreases_when_overfitting_small_subset(small_splits):
    gen, kept, mcfg = small_splits
    train = split_view(kept, "train")[:200]
    dev = split_view(kept, "dev")[:50]
    rec = tr.train_run(train, dev, mcfg, quick_cfg(epochs=10), get_preset("baseline"), seed=3)
    losses = np.array([e["task"] for e in rec.epoch_losses])
    smooth = np.convolve(losses, np.ones(3) / 3, mode="valid")
    assert np.all(np.diff(smooth) < 1e-3)
    assert smooth[-1] < smooth[0]


def test_selected_checkpoint_maximizes_dev_accuracy(small_splits):
    gen, kept, mcfg = small_splits
    train, dev = split_view(kept, "train"), split_view(kept, "dev")
    rec = tr.train_run(train, dev, mcfg, quick_cfg(epochs=6), get_preset("baseline"), seed=4)
    accs = [a for _, a in rec.dev_acc_trace]
    assert rec.best_dev_acc == max(accs)
    assert rec.best_epoch == rec.dev_acc_trace[int(np.argmax(accs))][0]
    assert tr.dev_accuracy(rec.params, dev) == rec.best_dev_acc


def test_checkpoint_roundtrip_reproduces_dev_accuracy(small_splits, tmp_path):
    gen, kept, mcfg = small_splits
    train, dev = split_view(kept, "train"), split_view(kept, "dev")
    rec = tr.train_run(train, dev, mcfg, quick_cfg(), get_preset("baseline"), seed=5,
                       run_dir=str(tmp_path), config_hash="cafebabe0123")
    params, meta = m.load_checkpoint(tmp_path / "checkpoint.npz")
    assert meta["config_hash"] == "cafebabe0123"
    assert tr.dev_accuracy(params, dev) == rec.best_dev_acc

    log_lines = (tmp_path / "epochs.jsonl").read_text().strip().split("\n")
    assert len(log_lines) == quick_cfg().epochs
    assert all(json.loads(line)["config_hash"] == "cafebabe0123" for line in log_lines)


@pytest.mark.filterwarnings("ignore:invalid value encountered")
def test_divergence_aborts_with_diagnostic(small_splits, monkeypatch):
    gen, kept, mcfg = small_splits
    train, dev = split_view(kept, "train"), split_view(kept, "dev")

    def poisoned_init(config, seed):
        params = m.init_params(config, seed)
        params["b_cls2"][0, 0] = np.inf
        return params

    monkeypatch.setattr(tr, "init_params", poisoned_init)
    rec = tr.train_run(train, dev, mcfg, quick_cfg(), get_preset("baseline"), seed=6)
    assert rec.diverged
    assert "non-finite" in rec.diagnostic
    assert rec.params is None  # no checkpoint from a diverged run


def test_empty_split_rejected(small_splits):
    gen, kept, mcfg = small_splits
    with pytest.raises(ContractError):
        tr.train_run([], split_view(kept, "dev"), mcfg, quick_cfg(),
                     get_preset("baseline"), seed=0)


def test_config_validation():
    with pytest.raises(ContractError):
        tr.TrainConfig(epochs=0).validate()
    with pytest.raises(ContractError):
        tr.TrainConfig(batch_size=0).validate()
