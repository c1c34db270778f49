"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 pipeline failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io as eio
from .config import RunConfig
from .labels import VIEW_CHAMBERS, Chamber
from .measure import MeasurementError, MeasurementSet, measure_study
from .pipeline import (AtlasRefiner, FrameRecord, FrameStore, PipelineFailure, RefinerUntrainable, load_atlas,
                       run_view_pipeline, save_atlas, segment_frames, weak_labels)
from .raster import InvalidInput
from .stats import bootstrap_ci, dice

log = logging.getLogger("echoseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PIPELINE = 0, 1, 2, 3
VIEWS = ("A2C", "A4C", "SAX")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# helpers

def _load(args) -> tuple[eio.StudyManifest, RunConfig]:
    if not args.manifest:
        raise UsageError("--manifest is required")
    manifest = eio.StudyManifest.load(args.manifest)
    try:
        cfg = RunConfig.load(args.config)
    except (OSError, json.JSONDecodeError, ValueError, KeyError) as e:
        raise eio.DataError(f"configuration: {e}") from e
    if args.seed is not None:
        cfg.pipeline.seed = args.seed
    return manifest, cfg


def _splits(value: str | None, default: tuple[str, ...]) -> tuple[str, ...]:
    if value is None:
        return default
    parts = tuple(s.strip() for s in value.split(",") if s.strip())
    bad = [s for s in parts if s not in eio.SPLITS]
    if bad or not parts:
        raise UsageError(f"--split must name splits from {eio.SPLITS}, got {value!r}")
    return parts


def _store(manifest: eio.StudyManifest) -> FrameStore:
    def loader(path):
        return lambda: eio.read_frame(path)[0]

    records = [FrameRecord(f.key, f.view, f.split, loader(f.image), f.patient, f.study, f.mirrored)
               for f in manifest.first_cycle()]
    return FrameStore(records)


def _entries(manifest: eio.StudyManifest) -> dict:
    return {f.key: f for f in manifest.frames}


def _write_labels(out: Path, labels: dict, entries: dict) -> None:
    for key in sorted(labels, key=repr):
        eio.write_labelmap(eio.label_path(out, entries[key]), labels[key])


def _model_path(args, view: str) -> Path:
    base = Path(args.models) if args.models else Path(args.out) / "models"
    return base / f"{view}.npz"


def _read_model(path: Path):
    if not path.exists():
        raise PipelineFailure(f"missing refiner model {path}; run train first")
    return load_atlas(path.read_bytes())


def _out(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    return Path(args.out)


# --------------------------------------------------------------------------
# commands

def cmd_phantom(args) -> None:
    out = _out(args)
    path = eio.write_phantom_dataset(out, studies=args.studies, seed=args.seed or 0, frames=args.frames,
                                     variation=args.variation)
    print(path)


def cmd_weaklabel(args) -> None:
    manifest, cfg = _load(args)
    out = _out(args)
    view = args.view.upper()
    store = _store(manifest)
    model = _read_model(_model_path(args, "A2C")) if view == "A4C" else None
    labels = weak_labels(view, store, cfg.pipeline, cfg.qc, AtlasRefiner.from_config(cfg.pipeline), model)
    _write_labels(out / "weak", labels, _entries(manifest))
    n = len(store.keys(view))
    eio.write_json(out / "weak" / f"{view}_summary.json", {"view": view, "frames": n, "labeled": len(labels)})
    print(f"{view}: {len(labels)}/{n} frames with QC-passing weak labels")


def cmd_train(args) -> None:
    manifest, cfg = _load(args)
    out = _out(args)
    store = _store(manifest)
    entries = _entries(manifest)
    summary = {}
    a2c_model = None
    for view in VIEWS:
        if not store.keys(view):
            continue
        if view == "A4C" and a2c_model is None:
            raise PipelineFailure("A4C frames present but no A2C model could be trained")
        res = run_view_pipeline(view, store, cfg.pipeline, cfg.qc, AtlasRefiner.from_config(cfg.pipeline),
                                a2c_model)
        if view == "A2C":
            a2c_model = res.model
        for step, labels in res.steps.items():
            _write_labels(out / "steps" / step, labels, entries)
        _write_labels(out / "labels", res.final, entries)
        eio.atomic_write(out / "models" / f"{view}.npz", save_atlas(res.model))
        summary[view] = {"frames": len(store.keys(view)),
                         "coverage": {s: len(v) for s, v in res.steps.items()},
                         "rounds": [asdict(r) for r in res.reports]}
        print(f"{view}: " + ", ".join(f"{s} {len(v)}" for s, v in res.steps.items()))
    if not summary:
        raise eio.DataError("manifest holds no train/val frames")
    eio.write_json(out / "train_summary.json", summary)
    eio.write_json(out / "config_used.json", cfg.to_dict())


def cmd_segment(args) -> None:
    manifest, cfg = _load(args)
    out = _out(args)
    splits = _splits(args.split, ("test",))
    store = _store(manifest)
    entries = _entries(manifest)
    refiner = AtlasRefiner.from_config(cfg.pipeline)
    counts = {}
    for view in VIEWS:
        keys = store.keys(view, splits)
        if not keys:
            continue
        model = _read_model(_model_path(args, view))
        labels = segment_frames(refiner, model, store, view, keys, cfg.pipeline, cfg.qc)
        _write_labels(out / "segment", labels, entries)
        counts[view] = {"frames": len(keys), "segmented": len(labels)}
    eio.write_json(out / "segment" / "summary.json", {"splits": list(splits), "views": counts})
    print(json.dumps(counts, sort_keys=True))


def _label_series(manifest, label_dir: Path, splits) -> dict[str, dict[str, dict[str, list]]]:
    """study -> view -> video -> per-frame label (None when absent)."""
    out: dict = {}
    for f in manifest.first_cycle():
        if f.split not in splits:
            continue
        p = eio.label_path(label_dir, f)
        lab = eio.read_labelmap(p) if p.exists() else None
        out.setdefault(f.study, {}).setdefault(f.view, {}).setdefault(f.video, []).append(lab)
    return out


def _study_patient(manifest) -> dict[str, str]:
    return {f.study: f.patient for f in manifest.frames}


def cmd_measure(args) -> None:
    manifest, cfg = _load(args)
    out = _out(args)
    splits = _splits(args.split, ("test",))
    label_dir = Path(args.labels) if args.labels else out / "segment"
    spacing = 0.5  # label maps live on the standardized grid
    patient = _study_patient(manifest)
    results = {}
    for study, views in sorted(_label_series(manifest, label_dir, splits).items()):
        info = manifest.patients.get(patient[study], eio.PatientInfo())
        try:
            m = measure_study(views.get("A2C", {}), views.get("A4C", {}), views.get("SAX"), spacing,
                              cfg.measure.n_disks, info.bsa)
        except MeasurementError as e:
            m = MeasurementSet(BSA=info.bsa, flags=[str(e)])
        results[study] = m.to_dict()
    eio.write_json(out / "measurements.json", results)
    print(f"measured {len(results)} studies")


def cmd_compare(args) -> None:
    manifest, cfg = _load(args)
    out = _out(args)
    path = Path(args.measurements) if args.measurements else out / "measurements.json"
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise eio.DataError(f"{path}: cannot read measurements ({e})") from e
    fields = set(MeasurementSet.__dataclass_fields__)
    meas = {s: MeasurementSet(**{k: v for k, v in d.items() if k in fields}) for s, d in raw.items()}
    patient = _study_patient(manifest)
    refs = {s: manifest.patients[patient[s]].reference for s in meas
            if s in patient and patient[s] in manifest.patients}
    written = eio.emit_reports(meas, refs, out / "reports", cfg.thresholds)
    print("\n".join(str(p) for p in written))


def cmd_dice(args) -> None:
    manifest, _ = _load(args)
    out = _out(args)
    splits = _splits(args.split, ("test",))
    label_dir = Path(args.labels) if args.labels else out / "segment"
    scores: dict[str, dict[str, list[float]]] = {}
    for f in manifest.first_cycle():
        if f.split not in splits:
            continue
        if f.truth is None:
            raise eio.DataError(f"{f.video}#{f.frame}: no truth label in manifest")
        truth = eio.read_labelmap(f.truth)
        p = eio.label_path(label_dir, f)
        pred = eio.read_labelmap(p) if p.exists() else np.zeros_like(truth)
        classes = VIEW_CHAMBERS[f.view] + ((Chamber.MYO,) if (truth == Chamber.MYO).any() else ())
        for ch in classes:
            scores.setdefault(f.view, {}).setdefault(ch.name, []).append(dice(pred == ch, truth == ch))
    if not scores:
        raise eio.DataError("no frames in the selected split")
    seed = args.seed or 0
    report = {}
    for view, per in sorted(scores.items()):
        report[view] = {}
        for ch, vals in per.items():
            lo, hi = bootstrap_ci(vals, seed=seed) if len(vals) >= 2 else (vals[0], vals[0])
            report[view][ch] = {"n": len(vals), "mean": float(np.mean(vals)), "ci95": [lo, hi]}
    eio.write_json(out / "dice.json", report)
    print(json.dumps(report, sort_keys=True))


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", help="study manifest JSON")
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--split", help="comma-separated splits (train,val,test)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="echoseg", description="Label-free echocardiogram chamber segmentation")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", parents=[common], help="write a synthetic phantom dataset")
    s.add_argument("--studies", type=int, default=10)
    s.add_argument("--frames", type=int, default=4)
    s.add_argument("--variation", type=float, default=1.0)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("weaklabel", parents=[common], help="initial weak labels for one view")
    s.add_argument("--view", required=True, type=str.lower, choices=["a2c", "a4c", "sax"])
    s.add_argument("--models", help="directory holding A2C.npz (A4C only)")
    s.set_defaults(func=cmd_weaklabel)

    s = sub.add_parser("train", parents=[common], help="run the weak-label and self-learning steps")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("segment", parents=[common], help="apply the final refiners to a split")
    s.add_argument("--models", help="directory of fitted refiner models (default OUT/models)")
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("measure", parents=[common], help="clinical measurements from label maps")
    s.add_argument("--labels", help="label directory (default OUT/segment)")
    s.set_defaults(func=cmd_measure)

    s = sub.add_parser("compare", parents=[common], help="agreement statistics and plots")
    s.add_argument("--measurements", help="measurements JSON (default OUT/measurements.json)")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("dice", parents=[common], help="Dice scores with bootstrap intervals")
    s.add_argument("--labels", help="label directory (default OUT/segment)")
    s.set_defaults(func=cmd_dice)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (eio.DataError, InvalidInput, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (PipelineFailure, RefinerUntrainable) as e:
        print(f"pipeline failure: {e}", file=sys.stderr)
        return EXIT_PIPELINE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
