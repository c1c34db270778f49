"""In-memory phantom studies shared by the experiment scripts."""

from __future__ import annotations

import numpy as np

from echoseg.io import split_for
from echoseg.phantom import degrade, generate, jittered_study
from echoseg.pipeline import FrameRecord, FrameStore


def build_store(studies, frames=2, seed=0, views=("A2C", "A4C", "SAX"), degraded_fraction=0.0,
                all_train=False):
    """FrameStore plus truth labels; a fraction of frames gets coarse extra speckle."""
    rng = np.random.default_rng([seed, 99])
    records, truth = [], {}
    for i in range(studies):
        specs = jittered_study(int(np.random.SeedSequence([seed, i]).generate_state(1)[0] >> 1), frames=frames)
        split = "train" if all_train else split_for(i)
        for view in views:
            imgs, labels, _ = generate(specs[view])
            for t, (img, lab) in enumerate(zip(imgs, labels)):
                if rng.random() < degraded_fraction:
                    img = degrade(img, "speckle", seed=1000 * i + t, strength=2.0, grain=3.0)
                key = (f"S{i:04d}_{view}", t)
                records.append(FrameRecord(key, view, split, (lambda im=img: im), f"P{i:04d}", f"S{i:04d}"))
                truth[key] = lab
    return FrameStore(records), truth
