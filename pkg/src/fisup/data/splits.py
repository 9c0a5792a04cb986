"""Changing-prior distribution shift: group-level 80/20 pool allocation.

Each question-type group is assigned a direction (80% of it to the ID pool or
80% to the OOD pool, balanced across groups). Inside a group, allocation is
answer-stratified: answer cells are filled whole into the ID quota in a
seed-shuffled order, so the two pools end up with different answer priors for
the same group while the group-level 80:20 count is exact. The ID pool is
then carved into Train/Dev/Test-ID and the OOD pool becomes Test-OOD, either
by ratios or by requested absolute sizes (oversampled instances are dropped).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SPLITS = ("train", "dev", "test_id", "test_ood")
DEFAULT_SIZES = {"train": 8000, "dev": 1000, "test_id": 1500, "test_ood": 1500}
DEFAULT_ID_RATIOS = (0.762, 0.095, 0.143)  # train : dev : test_id shares of the ID pool


class SplitError(ValueError):
    pass


@dataclass
class SplitSpec:
    seed: int
    id_share: float
    group_directions: dict = field(default_factory=dict)  # group -> ID share (0.8 or 0.2)
    assignment: dict = field(default_factory=dict)         # instance id -> split name
    sizes: dict = field(default_factory=dict)
    n_dropped: int = 0

    def split_ids(self, split):
        return sorted(i for i, s in self.assignment.items() if s == split)


def _stratified_group_split(instances, id_share, rng):
    """Fill the group's exact ID quota answer-cell by answer-cell."""
    n_id = math.ceil(id_share * len(instances))  # rounding favors the ID pool
    cells = {}
    for inst in instances:
        cells.setdefault(inst.label, []).append(inst.id)
    labels = sorted(cells)
    order = rng.permutation(len(labels))
    id_ids, ood_ids = [], []
    for j in order:
        ids = cells[labels[j]]
        ids = [ids[k] for k in rng.permutation(len(ids))]
        room = n_id - len(id_ids)
        id_ids += ids[:room]
        ood_ids += ids[room:]
    return id_ids, ood_ids


def apply_shift_split(instances, seed, sizes=None, id_ratios=DEFAULT_ID_RATIOS,
                      id_share=0.8):
    """Build a SplitSpec over the dataset; deterministic given seed.

    sizes: optional absolute {train, dev, test_id, test_ood} targets. When
    given, pools are downsampled to fit and leftovers are dropped; otherwise
    the whole ID pool is split by id_ratios and the whole OOD pool is
    Test-OOD.
    """
    rng = np.random.default_rng(seed)
    groups = {}
    for inst in instances:
        groups.setdefault(inst.question_type, []).append(inst)
    keys = sorted(groups)

    directions = [id_share, round(1.0 - id_share, 10)] * ((len(keys) + 1) // 2)
    perm = rng.permutation(len(keys))
    group_directions = {keys[i]: directions[j] for j, i in enumerate(perm)}

    id_pool, ood_pool = [], []
    for key in keys:
        gid, good = _stratified_group_split(groups[key], group_directions[key], rng)
        id_pool += gid
        ood_pool += good

    id_pool = [id_pool[k] for k in rng.permutation(len(id_pool))]
    ood_pool = [ood_pool[k] for k in rng.permutation(len(ood_pool))]

    if sizes is not None:
        need_id = sizes["train"] + sizes["dev"] + sizes["test_id"]
        if len(id_pool) < need_id:
            raise SplitError(f"ID pool has {len(id_pool)} instances, need {need_id}; "
                             "increase the generator size")
        if len(ood_pool) < sizes["test_ood"]:
            raise SplitError(f"OOD pool has {len(ood_pool)} instances, need {sizes['test_ood']}")
        n_train, n_dev, n_tid = sizes["train"], sizes["dev"], sizes["test_id"]
        n_tood = sizes["test_ood"]
    else:
        r = np.asarray(id_ratios, dtype=np.float64)
        r = r / r.sum()
        n_train = int(round(r[0] * len(id_pool)))
        n_dev = int(round(r[1] * len(id_pool)))
        n_tid = len(id_pool) - n_train - n_dev
        n_tood = len(ood_pool)

    assignment = {}
    for i in id_pool[:n_train]:
        assignment[i] = "train"
    for i in id_pool[n_train:n_train + n_dev]:
        assignment[i] = "dev"
    for i in id_pool[n_train + n_dev:n_train + n_dev + n_tid]:
        assignment[i] = "test_id"
    for i in ood_pool[:n_tood]:
        assignment[i] = "test_ood"

    final_sizes = {"train": n_train, "dev": n_dev, "test_id": n_tid, "test_ood": n_tood}
    return SplitSpec(seed=seed, id_share=id_share, group_directions=group_directions,
                     assignment=assignment, sizes=final_sizes,
                     n_dropped=len(instances) - len(assignment))


def apply_split_spec(instances, spec):
    """Label retained instances with their split and drop the rest."""
    kept = []
    for inst in instances:
        split = spec.assignment.get(inst.id)
        if split is not None:
            inst.split = split
            kept.append(inst)
    return kept


def split_view(instances, split):
    return [inst for inst in instances if inst.split == split]
