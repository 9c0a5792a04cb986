"""Input validation helpers shared by the estimator, model, and pipeline."""

from __future__ import annotations

import numpy as np


class ContractError(ValueError):
    """An argument violates a documented precondition."""


def check_finite(name, arr):
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains NaN or Inf")
    return arr


def check_objects(objects):
    objects = check_finite("objects", objects)
    if objects.ndim != 2 or objects.shape[0] < 1:
        raise ContractError(f"objects must be a (n, d) matrix with n >= 1, got {objects.shape}")
    return objects


def check_question(question):
    question = check_finite("question", question)
    if question.ndim != 1:
        raise ContractError(f"question must be a flat vector, got shape {question.shape}")
    return question


def check_mask(name, mask, n):
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (n,):
        raise ContractError(f"{name} must have length {n}, got shape {mask.shape}")
    if not np.isin(mask, (0.0, 1.0)).all():
        raise ContractError(f"{name} must be binary")
    return mask


def check_scores(name, scores, lo=0.0, hi=1.0):
    scores = check_finite(name, scores)
    if scores.min() < lo or scores.max() > hi:
        raise ContractError(f"{name} entries must lie in [{lo}, {hi}]")
    return scores


def check_instances(instances, need_masks=False):
    if not instances:
        raise ContractError("need at least one instance")
    d = instances[0].objects.shape[1]
    q = instances[0].question.shape[0]
    for inst in instances:
        check_objects(inst.objects)
        check_question(inst.question)
        if inst.objects.shape[1] != d or inst.question.shape[0] != q:
            raise ContractError("instances disagree on feature or question dimensions")
        check_scores(f"human_fi of instance {inst.id}", inst.human_fi)
        if need_masks and inst.important_mask is None:
            raise ContractError("instances must be binarized first (important_mask missing)")
    return instances
