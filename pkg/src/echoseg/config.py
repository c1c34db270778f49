"""Run configuration: one JSON document with a section per module."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .shapeqc import QcConfig


@dataclass
class PipelineConfig:
    seed: int = 0
    rounds: int = 1
    elbow_threshold: float = 0.05
    # weak-label extraction
    threshold: float = 0.1
    min_region: int = 500
    max_hole: int = 1000
    min_distance: float = 20
    sigma_spatial: float = 15.0
    sigma_range: float = 0.25
    median_ksize: int = 9
    laplacian_ksize: int = 5
    hough_min_distance: float = 400
    hough_r_min: int = 20
    hough_r_max: int = 80
    hough_vote_floor: float = 0.5
    # label shaping
    ring_dilate: int = 2
    ring_erode: int = 2
    edge_search: int = 8
    lv_ratio: float = 2.0
    rv_beta: float = 0.8
    rind_dilate: tuple[int, int] = (6, 14)
    rind_erode: tuple[int, int] = (3, 6)
    atlas_threshold: float = 0.5
    atlas_min_score: float = 0.5
    atlas_support: float = 0.01
    # pool thresholds the refiner may pick from when fitting; empty keeps ``threshold``
    refiner_thresholds: tuple[float, ...] = (0.06, 0.08, 0.1, 0.12, 0.14, 0.16, 0.18, 0.2, 0.22, 0.24, 0.26, 0.28, 0.3)


@dataclass
class MeasureConfig:
    n_disks: int = 20


@dataclass
class RunConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    qc: QcConfig = field(default_factory=QcConfig)
    measure: MeasureConfig = field(default_factory=MeasureConfig)
    # measurement name -> {"cutoff": float, "abnormal": "above"|"below", "by_sex": {...}}
    thresholds: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        unknown = set(d) - {"pipeline", "qc", "measure", "thresholds"}
        if unknown:
            raise ValueError(f"unknown configuration sections: {sorted(unknown)}")
        return cls(
            pipeline=_build(PipelineConfig, d.get("pipeline", {})),
            qc=QcConfig.from_dict(d.get("qc", {})),
            measure=_build(MeasureConfig, d.get("measure", {})),
            thresholds=dict(d.get("thresholds", {})),
        )

    @classmethod
    def load(cls, path: str | Path | None) -> RunConfig:
        if path is None:
            return cls()
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "pipeline": asdict(self.pipeline),
            "qc": self.qc.to_dict(),
            "measure": asdict(self.measure),
            "thresholds": self.thresholds,
        }


def _build(kind, values: dict):
    names = {f.name: f for f in fields(kind)}
    unknown = set(values) - set(names)
    if unknown:
        raise ValueError(f"unknown {kind.__name__} keys: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    return kind(**kwargs)
