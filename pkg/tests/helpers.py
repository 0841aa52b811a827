"""Shared test fixtures: a tiny model spec and toy clip sets."""

import numpy as np

from rdgesture.learn import CnnGruSpec

TINY = CnnGruSpec(conv=((3, 3, 2), (4, 3, 2)), pool=1, gru_hidden=8, frame_size=8, num_frames=4)


def toy_clips(n_per_class, spec=TINY, seed=0, noise=0.05):
    """Class k = constant intensity (k + 1) / 6 plus a little noise."""
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(spec.num_classes), n_per_class)
    level = (y + 1) / (spec.num_classes + 1)
    X = level[:, None, None, None] + noise * rng.normal(size=(len(y), spec.num_frames, spec.frame_size, spec.frame_size))
    order = rng.permutation(len(y))
    return np.clip(X, 0, 1).astype(np.float32)[order], y[order]
