"""Instance container, importance binarization, and JSONL persistence.

One instance = an object-feature matrix, a question encoding, a label id,
continuous per-object human importance scores, and (after binarization) the
derived important/unimportant mask. The on-disk format is one JSON record per
line with the field names pinned in ``schemas/dataset_record.schema.json``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

COLORS = ("red", "green", "blue", "yellow")


def answer_vocab(count_max=5, n_colors=4):
    """Shared answer vocabulary: no/yes, counts 0..count_max, color names."""
    return ("no", "yes") + tuple(str(k) for k in range(count_max + 1)) + COLORS[:n_colors]


@dataclass
class Instance:
    id: int
    objects: np.ndarray          # (n, d)
    question: np.ndarray         # (q,)
    question_type: str           # group key, e.g. "exists:2" or "rel:0:3"
    label: int
    human_fi: np.ndarray         # (n,) scores in [0, 1]
    split: str | None = None
    important_mask: np.ndarray | None = None   # set by binarize_dataset
    supervision_eligible: bool = True
    meta: dict = field(default_factory=dict)   # generator-side info, not persisted

    @property
    def n_objects(self):
        return self.objects.shape[0]

    def to_record(self):
        return {
            "id": self.id,
            "objects": self.objects.tolist(),
            "question": self.question.tolist(),
            "question_type": self.question_type,
            "label": int(self.label),
            "human_fi": self.human_fi.tolist(),
            "split": self.split,
        }

    @classmethod
    def from_record(cls, rec):
        return cls(
            id=int(rec["id"]),
            objects=np.asarray(rec["objects"], dtype=np.float64),
            question=np.asarray(rec["question"], dtype=np.float64),
            question_type=rec["question_type"],
            label=int(rec["label"]),
            human_fi=np.asarray(rec["human_fi"], dtype=np.float64),
            split=rec.get("split"),
        )


class ThresholdError(ValueError):
    pass


def binarize(human_fi, tau):
    """Threshold continuous scores into an important mask.

    Returns (mask, supervision_eligible): mask = 1[score >= tau]; an instance
    whose mask is all zeros is ineligible for supervision objectives (it still
    contributes the task loss).
    """
    if not 0.0 < tau < 1.0:
        raise ThresholdError(f"threshold must lie in (0, 1), got {tau}")
    scores = np.asarray(human_fi, dtype=np.float64)
    mask = (scores >= tau).astype(np.float64)
    return mask, bool(mask.any())


def binarize_dataset(instances, tau):
    """Set important_mask / supervision_eligible on every instance, in place."""
    for inst in instances:
        inst.important_mask, inst.supervision_eligible = binarize(inst.human_fi, tau)
    return instances


def save_jsonl(instances, path):
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_record()) + "\n")


def load_jsonl(path):
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Instance.from_record(json.loads(line)))
    return out
