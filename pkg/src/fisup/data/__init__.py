from .dataset import (
    Instance,
    answer_vocab,
    binarize,
    binarize_dataset,
    load_jsonl,
    save_jsonl,
)
from .generator import GeneratorConfig, GeneratorError, generate_dataset, rule_label
from .boxes import BoxGeometry, box_scores_iou, box_scores_pixel
from .splits import SplitSpec, apply_shift_split, apply_split_spec

__all__ = [
    "Instance",
    "answer_vocab",
    "binarize",
    "binarize_dataset",
    "load_jsonl",
    "save_jsonl",
    "GeneratorConfig",
    "GeneratorError",
    "generate_dataset",
    "rule_label",
    "BoxGeometry",
    "box_scores_iou",
    "box_scores_pixel",
    "SplitSpec",
    "apply_shift_split",
    "apply_split_spec",
]
