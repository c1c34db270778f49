"""Chamber classes and label-map helpers.

A label map is a ``uint8`` array holding :class:`Chamber` values per pixel.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np


class Chamber(IntEnum):
    BACKGROUND = 0
    LV = 1
    LA = 2
    RV = 3
    RA = 4
    MYO = 5

    @property
    def file_code(self) -> int:
        return 50 * int(self)

    @classmethod
    def from_name(cls, name: str) -> Chamber:
        return cls[name.upper()]


CHAMBERS = (Chamber.LV, Chamber.LA, Chamber.RV, Chamber.RA)

VIEW_CHAMBERS = {
    "A2C": (Chamber.LV, Chamber.LA),
    "A4C": (Chamber.LV, Chamber.LA, Chamber.RV, Chamber.RA),
    "SAX": (Chamber.LV,),
}

# classes drawn relative to a host chamber rather than found as blood pool
ATTACHED = {Chamber.LV: (Chamber.MYO,)}


def empty_label(shape: tuple[int, int]) -> np.ndarray:
    return np.zeros(shape, dtype=np.uint8)


def chamber_mask(label: np.ndarray, chamber: Chamber) -> np.ndarray:
    return label == int(chamber)


def present(label: np.ndarray) -> list[Chamber]:
    return [Chamber(v) for v in np.unique(label) if v != 0]


def compose(shape: tuple[int, int], masks: dict[Chamber, np.ndarray]) -> np.ndarray:
    """Paint masks in the given order; later chambers never overwrite earlier ones."""
    out = empty_label(shape)
    for chamber, mask in masks.items():
        out[mask & (out == 0)] = int(chamber)
    return out
