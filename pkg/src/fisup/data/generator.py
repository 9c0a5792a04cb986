"""Synthetic object/question dataset with exact ground-truth importance.

Each object row is [type one-hot | color one-hot | nuisance dims ~ N(0,1)].
Four question families over the object types:

  exists:c    is an object of type c present?              -> yes / no
  count:c     how many objects of type c?                  -> "0".."count_max"
  attr:c      color of the unique type-c object            -> color name
  rel:c1:c2   are objects of both types present?           -> yes / no

The label is a deterministic function of the objects whose type the question
references; remaining rows are distractors drawn from the non-referenced
types, so resampling them can never change the label. Human importance is
1 for referenced objects and 0 for distractors, plus clipped Gaussian noise.

Answer priors are profile-driven: each question group is designated profile
"a" or "b" (balanced, seed-shuffled), and the two profiles skew the sampled
answers differently. Combined with the shift split this produces the
changing-prior ID/OOD structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .dataset import COLORS, Instance, answer_vocab

FAMILIES = ("exists", "count", "attr", "rel")

# answer-prior profiles per family; groups are designated "a" or "b"
EXISTS_YES_RATE = {"a": 0.80, "b": 0.35}
COUNT_DIST = {
    "a": (0.08, 0.40, 0.28, 0.12, 0.07, 0.05),
    "b": (0.08, 0.05, 0.12, 0.28, 0.25, 0.22),
}
COLOR_CONC = {"a": (0.55, 0.25, 0.12, 0.08), "b": (0.08, 0.12, 0.25, 0.55)}
REL_PRESENCE = {"a": 0.85, "b": 0.50}


class GeneratorError(ValueError):
    pass


@dataclass
class GeneratorConfig:
    size: int = 26000
    n_objects: int = 9
    n_types: int = 5
    n_colors: int = 4
    nuisance_dim: int = 7
    count_max: int = 5
    fi_noise: float = 0.05
    families: tuple = FAMILIES

    @property
    def feature_dim(self):
        return self.n_types + self.n_colors + self.nuisance_dim

    @property
    def question_dim(self):
        return len(FAMILIES) + 2 * self.n_types

    @property
    def answers(self):
        return answer_vocab(self.count_max, self.n_colors)

    def validate(self):
        if self.n_objects < 1:
            raise GeneratorError("need at least one object per instance")
        if len(self.answers) < 2:
            raise GeneratorError("answer vocabulary must have at least two entries")
        if self.n_types < 3:
            raise GeneratorError("need at least three object types (rel questions exclude two)")
        if not 1 <= self.n_colors <= len(COLORS):
            raise GeneratorError(f"n_colors must be in [1, {len(COLORS)}]")
        if self.count_max < 1:
            raise GeneratorError("count_max must be >= 1")
        room = {"exists": 3, "count": self.count_max, "attr": 1, "rel": 4}
        need = max(room[f] for f in self.families)
        if need > self.n_objects:
            raise GeneratorError(f"n_objects={self.n_objects} cannot hold up to "
                                 f"{need} referenced objects")
        if not set(self.families) <= set(FAMILIES):
            raise GeneratorError(f"unknown family in {self.families}")
        return self


def group_keys(config):
    keys = []
    for fam in config.families:
        if fam == "rel":
            keys += [f"rel:{c1}:{c2}" for c1 in range(config.n_types)
                     for c2 in range(config.n_types) if c1 != c2]
        else:
            keys += [f"{fam}:{c}" for c in range(config.n_types)]
    return keys


def parse_group_key(key):
    parts = key.split(":")
    family = parts[0]
    c1 = int(parts[1])
    c2 = int(parts[2]) if family == "rel" else None
    return family, c1, c2


def assign_profiles(config, rng):
    """Balanced a/b designation per group, shuffled from the seed."""
    keys = group_keys(config)
    tags = ["a", "b"] * ((len(keys) + 1) // 2)
    perm = rng.permutation(len(keys))
    return {keys[i]: tags[j] for j, i in enumerate(perm)}


def rule_label(family, c1, c2, obj_types, count_max=5, n_colors=4, obj_colors=None):
    """The generator's label function, evaluated on a (sub)scene.

    obj_types / obj_colors are integer arrays; only objects of the referenced
    types influence the result.
    """
    obj_types = np.asarray(obj_types)
    answers = answer_vocab(count_max, n_colors)
    if family == "exists":
        ans = "yes" if np.any(obj_types == c1) else "no"
    elif family == "count":
        ans = str(min(int(np.sum(obj_types == c1)), count_max))
    elif family == "attr":
        idx = np.flatnonzero(obj_types == c1)
        if idx.size != 1:
            raise GeneratorError("attr question requires exactly one referenced object")
        ans = COLORS[int(obj_colors[idx[0]])]
    elif family == "rel":
        ans = "yes" if (np.any(obj_types == c1) and np.any(obj_types == c2)) else "no"
    else:
        raise GeneratorError(f"unknown family {family!r}")
    return answers.index(ans)


def decode_objects(objects, config):
    """Recover integer type/color codes from pristine object rows."""
    t = config.n_types
    types = np.argmax(objects[:, :t], axis=1)
    colors = np.argmax(objects[:, t:t + config.n_colors], axis=1)
    return types, colors


def distractor_types(question_type, n_types):
    family, c1, c2 = parse_group_key(question_type)
    banned = {c1} if c2 is None else {c1, c2}
    return [t for t in range(n_types) if t not in banned]


def encode_question(family, c1, c2, config):
    q = np.zeros(config.question_dim)
    q[FAMILIES.index(family)] = 1.0
    q[len(FAMILIES) + c1] = 1.0
    if c2 is not None:
        q[len(FAMILIES) + config.n_types + c2] = 1.0
    return q


def _sample_referenced(family, profile, config, rng):
    """Counts of referenced objects per referenced type, plus attr color."""
    if family == "exists":
        if rng.random() < EXISTS_YES_RATE[profile]:
            return [int(rng.integers(1, 4))], None
        return [0], None
    if family == "count":
        k = int(rng.choice(config.count_max + 1, p=_renorm(COUNT_DIST[profile], config.count_max + 1)))
        return [k], None
    if family == "attr":
        color = int(rng.choice(config.n_colors, p=_renorm(COLOR_CONC[profile], config.n_colors)))
        return [1], color
    # rel
    pres = REL_PRESENCE[profile]
    k1 = int(rng.integers(1, 3)) if rng.random() < pres else 0
    k2 = int(rng.integers(1, 3)) if rng.random() < pres else 0
    return [k1, k2], None


def _renorm(dist, k):
    p = np.asarray(dist[:k], dtype=np.float64)
    return p / p.sum()


def _make_object(obj_type, color, config, rng):
    row = np.zeros(config.feature_dim)
    row[obj_type] = 1.0
    row[config.n_types + color] = 1.0
    row[config.n_types + config.n_colors:] = rng.normal(size=config.nuisance_dim)
    return row


def generate_dataset(config, seed):
    """Draw `config.size` instances; deterministic given (config, seed)."""
    config.validate()
    rng = np.random.default_rng(seed)
    profiles = assign_profiles(config, rng)
    keys = group_keys(config)
    fam_of = {k: parse_group_key(k)[0] for k in keys}
    keys_by_family = {f: [k for k in keys if fam_of[k] == f] for f in config.families}

    instances = []
    for idx in range(config.size):
        family = config.families[int(rng.integers(len(config.families)))]
        key = keys_by_family[family][int(rng.integers(len(keys_by_family[family])))]
        _, c1, c2 = parse_group_key(key)
        ref_counts, attr_color = _sample_referenced(family, profiles[key], config, rng)

        ref_types = [c1] if c2 is None else [c1, c2]
        rows, important = [], []
        for rt, k in zip(ref_types, ref_counts):
            for j in range(k):
                color = attr_color if family == "attr" else int(rng.integers(config.n_colors))
                rows.append(_make_object(rt, color, config, rng))
                important.append(True)
        pool = distractor_types(key, config.n_types)
        while len(rows) < config.n_objects:
            rows.append(_make_object(pool[int(rng.integers(len(pool)))],
                                     int(rng.integers(config.n_colors)), config, rng))
            important.append(False)

        perm = rng.permutation(config.n_objects)
        objects = np.stack(rows)[perm]
        important = np.asarray(important)[perm]

        types, colors = decode_objects(objects, config)
        label = rule_label(family, c1, c2, types, config.count_max, config.n_colors, colors)

        fi = important.astype(np.float64)
        if config.fi_noise > 0:
            fi = np.clip(fi + rng.normal(0.0, config.fi_noise, size=fi.shape), 0.0, 1.0)

        instances.append(Instance(
            id=idx,
            objects=objects,
            question=encode_question(family, c1, c2, config),
            question_type=key,
            label=label,
            human_fi=fi,
            meta={"important": important, "profile": profiles[key]},
        ))
    return instances


def resample_distractors(inst, config, rng):
    """Fresh label-independent draws for every non-referenced object.

    Replaces each truly-unimportant row with a new object whose type comes
    from the question's distractor pool; the label function cannot change.
    """
    pool = distractor_types(inst.question_type, config.n_types)
    objects = inst.objects.copy()
    for i in np.flatnonzero(~inst.meta["important"]):
        objects[i] = _make_object(pool[int(rng.integers(len(pool)))],
                                  int(rng.integers(config.n_colors)), config, rng)
    return objects


def config_dict(config):
    d = asdict(config)
    d["families"] = list(config.families)
    return d
