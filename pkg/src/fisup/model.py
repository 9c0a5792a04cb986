"""Attention-pooled classifier over (objects, question) pairs.

Per-object attention scores come from an MLP over [object ; question]; the
softmax-weighted object sum is concatenated with a question projection and
fed to a two-layer head. The single attention vector is exposed so it can be
used as an explanation. All computation runs through the autodiff graph, so
outputs are differentiable w.r.t. both parameters and object features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .validation import ContractError, check_finite

PARAM_NAMES = ("w_q", "b_q", "w_att1", "b_att1", "w_att2", "b_att2",
               "w_cls1", "b_cls1", "w_cls2", "b_cls2")


@dataclass
class ModelConfig:
    feature_dim: int
    question_dim: int
    n_answers: int
    hidden_dim: int = 64


@dataclass
class AnswerDistribution:
    logits: np.ndarray
    probs: np.ndarray
    predicted: int


def init_params(config, seed):
    """Scaled-normal weights, zero biases; deterministic given seed."""
    rng = np.random.default_rng(seed)
    d, q, h, y = (config.feature_dim, config.question_dim,
                  config.hidden_dim, config.n_answers)

    def w(fan_in, fan_out):
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))

    return {
        "w_q": w(q, h), "b_q": np.zeros((1, h)),
        "w_att1": w(d + q, h), "b_att1": np.zeros((1, h)),
        "w_att2": w(h, 1), "b_att2": np.zeros((1, 1)),
        "w_cls1": w(d + h, h), "b_cls1": np.zeros((1, h)),
        "w_cls2": w(h, y), "b_cls2": np.zeros((1, y)),
    }


def params_to_nodes(params, trainable=True):
    make = ad.leaf if trainable else ad.constant
    return {k: make(v, name=k) if trainable else make(v) for k, v in params.items()}


def forward_graph(pnodes, objects, questions):
    """Batched forward pass.

    objects: (B, n, d) node or array; questions: (B, q). Returns a dict of
    graph nodes: logits (B, Y), probs (B, Y), attention (B, n).
    """
    obj = objects if isinstance(objects, ad.Node) else ad.constant(objects)
    qs = questions if isinstance(questions, ad.Node) else ad.constant(questions)
    b, n, d = obj.shape
    q = qs.shape[-1]

    obj_flat = ad.reshape(obj, (b * n, d))
    q_per_obj = ad.reshape(ad.broadcast_to(ad.reshape(qs, (b, 1, q)), (b, n, q)), (b * n, q))
    att_in = ad.concat([obj_flat, q_per_obj], axis=1)
    att_h = ad.tanh(ad.add(ad.matmul(att_in, pnodes["w_att1"]), pnodes["b_att1"]))
    scores = ad.reshape(ad.add(ad.matmul(att_h, pnodes["w_att2"]), pnodes["b_att2"]), (b, n))
    attention = ad.softmax(scores, axis=-1)

    pooled = ad.reshape(ad.matmul(ad.reshape(attention, (b, 1, n)), obj), (b, d))
    q_proj = ad.tanh(ad.add(ad.matmul(qs, pnodes["w_q"]), pnodes["b_q"]))
    joint = ad.concat([pooled, q_proj], axis=1)
    cls_h = ad.tanh(ad.add(ad.matmul(joint, pnodes["w_cls1"]), pnodes["b_cls1"]))
    logits = ad.add(ad.matmul(cls_h, pnodes["w_cls2"]), pnodes["b_cls2"])
    probs = ad.softmax(logits, axis=-1)
    return {"logits": logits, "probs": probs, "attention": attention}


def forward(params, objects, question):
    """Single-instance forward. Returns (AnswerDistribution, attention)."""
    objects = check_finite("objects", objects)
    question = check_finite("question", question)
    out = forward_graph(params_to_nodes(params, trainable=False),
                        objects[None], question[None])
    logits = out["logits"].value[0]
    probs = out["probs"].value[0]
    return (AnswerDistribution(logits=logits, probs=probs, predicted=int(np.argmax(logits))),
            out["attention"].value[0])


def forward_batch(params, objects, questions):
    """No-grad batched forward on stacked arrays; returns value dict."""
    objects = check_finite("objects", objects)
    questions = check_finite("questions", questions)
    out = forward_graph(params_to_nodes(params, trainable=False), objects, questions)
    return {k: v.value for k, v in out.items()}


def predict(params, objects, question):
    """Label id via argmax over logits (ties break to the lowest index)."""
    dist, _ = forward(params, objects, question)
    return dist.predicted


def predict_batch(params, instances, batch_size=512):
    objects = np.stack([i.objects for i in instances])
    questions = np.stack([i.question for i in instances])
    preds = []
    for lo in range(0, len(instances), batch_size):
        out = forward_batch(params, objects[lo:lo + batch_size], questions[lo:lo + batch_size])
        preds.append(np.argmax(out["logits"], axis=-1))
    return np.concatenate(preds)


def save_checkpoint(path, params, meta=None):
    """Named float64 arrays plus a JSON meta blob (config hash, shapes)."""
    meta = dict(meta or {})
    meta["shapes"] = {k: list(v.shape) for k, v in params.items()}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
             **params)


def load_checkpoint(path):
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        params = {k: data[k] for k in data.files if k != "__meta__"}
    for name in PARAM_NAMES:
        if name not in params:
            raise ContractError(f"checkpoint missing array {name!r}")
    return params, meta
