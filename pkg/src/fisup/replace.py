"""Replace functions: substitute masked-out object feature rows.

Rows with keep_mask=1 are always returned bit-identical; rows with
keep_mask=0 are overwritten according to the chosen strategy. The stochastic
strategies (gaussian, marginal, shuffle for its permutation) need an rng, and
gaussian/marginal additionally need the surrounding batch of object matrices
to estimate statistics / sample rows from.
"""

from __future__ import annotations

import numpy as np

STRATEGIES = ("all_neg_ones", "all_zeros", "gaussian", "marginal", "shuffle")
DEFAULT_STRATEGY = "all_neg_ones"

_NEEDS_BATCH = {"gaussian", "marginal"}
_NEEDS_RNG = {"gaussian", "marginal", "shuffle"}


class ReplaceError(ValueError):
    """Strategy called without the context it requires."""


def replace(x, keep_mask, strategy=DEFAULT_STRATEGY, batch=None, rng=None):
    """Return a copy of x with rows where keep_mask==0 substituted.

    x: (n, d) object matrix. keep_mask: length-n binary vector. batch: list of
    object matrices providing context for gaussian/marginal; x itself can be a
    member. Kept rows are returned unchanged, exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    keep = np.asarray(keep_mask).astype(bool)
    if keep.shape != (x.shape[0],):
        raise ReplaceError(f"keep_mask length {keep.shape} does not match {x.shape[0]} rows")
    if strategy not in STRATEGIES:
        raise ReplaceError(f"unknown replace strategy {strategy!r}")
    if strategy in _NEEDS_BATCH and batch is None:
        raise ReplaceError(f"strategy {strategy!r} requires a batch context")
    if strategy in _NEEDS_RNG and rng is None:
        raise ReplaceError(f"strategy {strategy!r} requires an rng")

    out = x.copy()
    drop = ~keep
    if not drop.any():
        return out

    if strategy == "all_zeros":
        out[drop] = 0.0
    elif strategy == "all_neg_ones":
        out[drop] = -1.0
    elif strategy == "gaussian":
        # zero-mean noise, scalar std over every entry of the batch
        std = float(np.std(np.concatenate([np.asarray(b, dtype=np.float64).ravel() for b in batch])))
        out[drop] = x[drop] + rng.normal(0.0, std, size=(int(drop.sum()), x.shape[1]))
    elif strategy == "marginal":
        pool = [np.asarray(b, dtype=np.float64) for b in batch if b is not x]
        if not pool:
            raise ReplaceError("marginal replacement needs at least one other batch element")
        rows = np.concatenate(pool, axis=0)
        idx = rng.integers(0, rows.shape[0], size=int(drop.sum()))
        out[drop] = rows[idx]
    elif strategy == "shuffle":
        # permute the multiset of entries across the replaced rows only
        flat = out[drop].ravel()
        out[drop] = rng.permutation(flat).reshape(-1, x.shape[1])
    return out


def replace_batch(xs, keep_masks, strategy=DEFAULT_STRATEGY, rng=None):
    """Apply `replace` over a stacked (B, n, d) batch with (B, n) masks.

    The constant strategies are vectorized; the stochastic ones fall back to
    the per-instance path with the batch itself as context.
    """
    xs = np.asarray(xs, dtype=np.float64)
    keep_masks = np.asarray(keep_masks)
    if strategy in ("all_zeros", "all_neg_ones"):
        fill = 0.0 if strategy == "all_zeros" else -1.0
        return np.where(keep_masks[:, :, None] > 0, xs, fill)
    batch = list(xs)
    return np.stack([
        replace(xs[i], keep_masks[i], strategy=strategy, batch=batch, rng=rng)
        for i in range(xs.shape[0])
    ])


def union_mask(e, u):
    """Keep-mask for inputs retaining important plus sampled-unimportant rows."""
    return np.maximum(np.asarray(e), np.asarray(u))
