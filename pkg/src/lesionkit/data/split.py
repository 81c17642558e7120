"""Seeded, optionally stratified train/validation splits."""
from __future__ import annotations

from collections import defaultdict

import numpy as np

from ..imaging import round_half_up


def split(items, validation_fraction: float, seed: int = 0, labels=None):
    """Disjoint, exhaustive ``(train, validation)`` lists.

    With ``labels`` the split is stratified: each class contributes
    ``round(count * fraction)`` items to validation.
    """
    items = list(items)
    if not 0.0 < validation_fraction < 1.0:
        raise ValueError(f"validation_fraction must lie in (0, 1), got {validation_fraction}")
    rng = np.random.default_rng(seed)
    if labels is None:
        groups = {None: list(range(len(items)))}
    else:
        labels = list(labels)
        if len(labels) != len(items):
            raise ValueError("labels and items differ in length")
        groups = defaultdict(list)
        for i, lab in enumerate(labels):
            groups[lab].append(i)
    val_idx = []
    for key in sorted(groups, key=lambda k: (k is None, str(k))):
        idx = np.array(groups[key])
        perm = idx[rng.permutation(len(idx))]
        val_idx.extend(perm[:round_half_up(len(idx) * validation_fraction)].tolist())
    val_set = set(val_idx)
    train = [items[i] for i in range(len(items)) if i not in val_set]
    val = [items[i] for i in sorted(val_set)]
    if not train or not val:
        raise ValueError(
            f"split of {len(items)} items at fraction {validation_fraction} leaves an empty side")
    return train, val
