"""File formats, manifests, cycle subsetting and report emission.

Frames are binary 8-bit portable graymaps (P5, maxval 255) with a JSON
sidecar of the same basename; label maps are P5 files holding fixed class
codes. Every write goes to a temporary file in the target directory and is
renamed into place.
"""

from __future__ import annotations

import csv
import io as _io
import json
import logging
import math
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .labels import Chamber
from .measure import MeasurementSet
from .raster import Raster, SectorGeometry
from .stats import UndefinedStatistic, agreement, bland_altman, classify_normal

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Malformed or inconsistent input data."""


# --------------------------------------------------------------------------
# atomic writes

def atomic_write(path: str | Path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | Path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# portable graymap

def encode_pgm(pixels: np.ndarray) -> bytes:
    if pixels.ndim != 2 or pixels.dtype != np.uint8:
        raise ValueError("PGM payload must be a 2-D uint8 array")
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes()


_WS = b" \t\r\n"


def decode_pgm(data: bytes, name: str = "<bytes>") -> np.ndarray:
    """Parse a binary graymap; errors name the file and byte offset."""
    if data[:2] != b"P5":
        raise DataError(f"{name}: bad magic {data[:2]!r} at byte offset 0, expected b'P5'")
    pos = 2
    fields = []
    while len(fields) < 3:
        # whitespace and comments between header tokens
        while pos < len(data) and (data[pos] in _WS or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < len(data) and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and data[pos] not in _WS:
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise DataError(f"{name}: malformed header token {token!r} at byte offset {start}")
        fields.append((int(token), start))
    (w, _), (h, _), (maxval, at) = fields
    if maxval != 255:
        raise DataError(f"{name}: maxval {maxval} at byte offset {at}, expected 255")
    if w < 1 or h < 1:
        raise DataError(f"{name}: empty image {w}x{h}")
    if pos >= len(data):
        raise DataError(f"{name}: header ends at byte offset {pos} without pixel data")
    pos += 1  # exactly one whitespace byte before the raster
    need = w * h
    if len(data) - pos < need:
        raise DataError(f"{name}: truncated pixel data at byte offset {len(data)}, "
                        f"expected {need} bytes from offset {pos}")
    return np.frombuffer(data, dtype=np.uint8, count=need, offset=pos).reshape(h, w).copy()


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise DataError(f"{path}: cannot read ({e.strerror})") from e


@dataclass(frozen=True)
class FrameMeta:
    view: str | None = None
    fps: float | None = None
    hr: float | None = None


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def write_frame(path: str | Path, img: Raster, meta: FrameMeta = FrameMeta()) -> None:
    px = np.rint(np.clip(img.pixels, 0, 1) * 255).astype(np.uint8)
    s = img.sector
    side = {"spacing_mm": img.spacing,
            "sector": {"apex": list(s.apex), "opening_angle": s.opening_angle, "depth": s.depth},
            "view": meta.view, "fps": meta.fps, "hr": meta.hr}
    atomic_write(path, encode_pgm(px))
    write_json(sidecar_path(path), side)


def read_frame(path: str | Path) -> tuple[Raster, FrameMeta]:
    path = Path(path)
    side_path = sidecar_path(path)
    if not side_path.exists():
        raise DataError(f"{path}: missing sidecar {side_path.name}")
    try:
        side = json.loads(_read_bytes(side_path))
    except json.JSONDecodeError as e:
        raise DataError(f"{side_path}: invalid JSON at byte offset {e.pos}") from e
    spacing = side.get("spacing_mm")
    if not isinstance(spacing, (int, float)) or not spacing > 0:
        raise DataError(f"{side_path}: invalid spacing {spacing!r}")
    try:
        sec = side["sector"]
        sector = SectorGeometry(tuple(map(float, sec["apex"])), float(sec["opening_angle"]), float(sec["depth"]))
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"{side_path}: invalid sector geometry ({e})") from e
    px = decode_pgm(_read_bytes(path), str(path))
    meta = FrameMeta(side.get("view"), side.get("fps"), side.get("hr"))
    return Raster(px.astype(np.float64) / 255.0, float(spacing), sector), meta


CODES = {c.file_code: c for c in Chamber}


def write_labelmap(path: str | Path, label: np.ndarray) -> None:
    label = np.asarray(label)
    if label.ndim != 2:
        raise ValueError("label map must be 2-D")
    if not np.isin(label, [int(c) for c in Chamber]).all():
        raise ValueError("label map holds values outside the chamber classes")
    atomic_write(path, encode_pgm((label.astype(np.uint8) * 50).astype(np.uint8)))


def read_labelmap(path: str | Path) -> np.ndarray:
    px = decode_pgm(_read_bytes(Path(path)), str(path))
    bad = ~np.isin(px, list(CODES))
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(f"{path}: unknown class code {int(px[r, c])}")
    return (px // 50).astype(np.uint8)


# --------------------------------------------------------------------------
# manifest

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class FrameEntry:
    patient: str
    study: str
    video: str
    frame: int
    view: str
    split: str
    image: Path
    fps: float | None = None
    hr: float | None = None
    truth: Path | None = None
    mirrored: bool = False

    @property
    def key(self) -> tuple[str, int]:
        return (self.video, self.frame)


@dataclass(frozen=True)
class PatientInfo:
    bsa: float | None = None
    sex: str | None = None
    reference: dict = field(default_factory=dict)


@dataclass
class StudyManifest:
    frames: list[FrameEntry]
    patients: dict[str, PatientInfo]
    root: Path = Path(".")

    def __post_init__(self):
        seen, split_of = set(), {}
        for f in self.frames:
            if f.key in seen:
                raise DataError(f"duplicate frame {f.video}#{f.frame}")
            seen.add(f.key)
            if f.split not in SPLITS:
                raise DataError(f"{f.video}#{f.frame}: unknown split {f.split!r}")
            if split_of.setdefault(f.patient, f.split) != f.split:
                raise DataError(f"patient {f.patient} appears in splits {split_of[f.patient]} and {f.split}")

    @classmethod
    def load(cls, path: str | Path) -> StudyManifest:
        path = Path(path)
        try:
            doc = json.loads(_read_bytes(path))
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: invalid JSON at byte offset {e.pos}") from e
        root = path.parent
        try:
            frames = [FrameEntry(
                patient=str(f["patient"]), study=str(f["study"]), video=str(f["video"]), frame=int(f["frame"]),
                view=str(f["view"]).upper(), split=str(f["split"]), image=root / f["image"],
                fps=f.get("fps"), hr=f.get("hr"), truth=root / f["truth"] if f.get("truth") else None,
                mirrored=bool(f.get("mirrored", False)),
            ) for f in doc["frames"]]
            patients = {str(k): PatientInfo(v.get("bsa"), v.get("sex"), dict(v.get("reference", {})))
                        for k, v in doc.get("patients", {}).items()}
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}: malformed manifest entry ({e!r})") from e
        return cls(frames, patients, root)

    def to_dict(self) -> dict:
        def rel(p):
            return os.path.relpath(p, self.root) if p is not None else None
        return {
            "frames": [{"patient": f.patient, "study": f.study, "video": f.video, "frame": f.frame,
                        "view": f.view, "split": f.split, "image": rel(f.image), "fps": f.fps, "hr": f.hr,
                        "truth": rel(f.truth), "mirrored": f.mirrored} for f in self.frames],
            "patients": {k: {"bsa": p.bsa, "sex": p.sex, "reference": p.reference}
                         for k, p in sorted(self.patients.items())},
        }

    def videos(self) -> dict[str, list[FrameEntry]]:
        out: dict[str, list[FrameEntry]] = {}
        for f in sorted(self.frames, key=lambda f: (f.video, f.frame)):
            out.setdefault(f.video, []).append(f)
        return out

    def first_cycle(self) -> list[FrameEntry]:
        """Frames of each video's first heart cycle."""
        keep = []
        for frames in self.videos().values():
            n = select_first_cycle(len(frames), frames[0].hr, frames[0].fps)
            keep.extend(frames[:n])
        return keep


def select_first_cycle(n_frames: int, hr: float | None, fps: float | None) -> int:
    """Number of leading frames covering one cardiac cycle: ceil(fps * 60 / hr), capped."""
    if hr is None or fps is None:
        log.warning("heart rate or frame rate missing; keeping all %d frames", n_frames)
        return n_frames
    if not (hr > 0 and fps > 0):
        raise DataError(f"heart rate and frame rate must be positive (hr={hr}, fps={fps})")
    # round first so float noise like 30.000000000000004 does not add a frame
    return min(n_frames, math.ceil(round(fps * 60.0 / hr, 9)))


def label_path(out: Path, entry: FrameEntry) -> Path:
    return out / entry.view / f"{entry.video}_{entry.frame:04d}.pgm"


# --------------------------------------------------------------------------
# reports

CSV_COLUMNS = ("measurement", "n", "r", "r2", "bias", "loa", "kappa", "accuracy")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def paired_values(measurements: dict[str, MeasurementSet], references: dict[str, dict]) -> dict[str, tuple]:
    """Per measurement: (study ids, predicted, reference), over studies with both values."""
    studies = sorted(set(measurements) & set(references))
    if not studies:
        raise DataError("nothing to compare")
    out = {}
    names = sorted({k for s in studies for k in measurements[s].values()} | {k for s in studies for k in references[s]})
    for name in names:
        ids, x, y = [], [], []
        for s in studies:
            a = measurements[s].values().get(name)
            b = references[s].get(name)
            if a is not None and b is not None:
                ids.append(s)
                x.append(float(a))
                y.append(float(b))
        if ids:
            out[name] = (ids, np.array(x), np.array(y))
    if not out:
        raise DataError("nothing to compare")
    return out


def comparison_rows(pairs: dict[str, tuple], thresholds: dict | None = None) -> list[dict]:
    rows = []
    for name, (_, x, y) in pairs.items():
        row = {"measurement": name, "n": len(x), "r": None, "r2": None, "bias": None, "loa": None,
               "kappa": None, "accuracy": None}
        if len(x) >= 3:
            try:
                rep = agreement(x, y)
                row.update(r=rep.r, r2=rep.r2, bias=rep.bias, loa=rep.loa)
            except UndefinedStatistic:
                row["bias"], row["loa"] = bland_altman(x, y)
        elif len(x) >= 2:
            row["bias"], row["loa"] = bland_altman(x, y)
        if thresholds and name in thresholds:
            pred, _ = classify_normal(x, thresholds, name)
            ref, _ = classify_normal(y, thresholds, name)
            _, ba = classify_normal(x, thresholds, name, reference=ref)
            row["kappa"] = None if math.isnan(ba.kappa) else ba.kappa
            row["accuracy"] = ba.accuracy
        rows.append(row)
    return rows


def _svg_figure(name: str, x: np.ndarray, y: np.ndarray) -> str:
    """Scatter (left) and Bland-Altman (right) panels as standalone SVG."""
    W, H, pad = 300, 260, 40

    def scale(v, lo, hi, a, b):
        return a + (b - a) * ((v - lo) / (hi - lo) if hi > lo else 0.5)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{2 * W}" height="{H}" viewBox="0 0 {2 * W} {H}">',
           f'<title>{name}</title>']
    lo, hi = float(min(x.min(), y.min())), float(max(x.max(), y.max()))
    out.append(f'<g id="scatter"><rect x="{pad}" y="{pad / 2}" width="{W - 1.5 * pad}" height="{H - 1.5 * pad}" '
               'fill="none" stroke="black"/>')
    x0, x1, y0, y1 = pad, W - pad / 2, H - pad, pad / 2
    out.append(f'<line class="identity" x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
               'stroke="gray" stroke-dasharray="4"/>')
    for a, b in zip(x, y):
        out.append(f'<circle cx="{scale(b, lo, hi, x0, x1):.2f}" cy="{scale(a, lo, hi, y0, y1):.2f}" r="2.5"/>')
    out.append(f'<text x="{W / 2:.0f}" y="{H - 8}" text-anchor="middle">reference</text></g>')
    mean = (x + y) / 2
    diff = x - y
    bias, loa = bland_altman(x, y) if len(x) >= 2 else (float(diff[0]), 0.0)
    dlo = float(min(diff.min(), bias - loa))
    dhi = float(max(diff.max(), bias + loa))
    if dhi == dlo:
        dlo, dhi = dlo - 1, dhi + 1
    mlo, mhi = float(mean.min()), float(mean.max())
    X0, X1 = W + pad, 2 * W - pad / 2
    out.append(f'<g id="bland-altman"><rect x="{W + pad}" y="{pad / 2}" width="{W - 1.5 * pad}" '
               f'height="{H - 1.5 * pad}" fill="none" stroke="black"/>')
    for m, d in zip(mean, diff):
        out.append(f'<circle cx="{scale(m, mlo, mhi, X0, X1):.2f}" cy="{scale(d, dlo, dhi, y0, y1):.2f}" r="2.5"/>')
    for cls, v in (("bias", bias), ("loa-upper", bias + loa), ("loa-lower", bias - loa)):
        yy = scale(v, dlo, dhi, y0, y1)
        out.append(f'<line class="{cls}" x1="{X0:.2f}" y1="{yy:.2f}" x2="{X1:.2f}" y2="{yy:.2f}" stroke="red"/>')
    out.append(f'<text x="{1.5 * W:.0f}" y="{H - 8}" text-anchor="middle">mean</text></g></svg>\n')
    return "\n".join(out)


def emit_reports(measurements: dict[str, MeasurementSet], references: dict[str, dict], out: str | Path,
                 thresholds: dict | None = None) -> list[Path]:
    """Write measurements.json, comparison.csv and one SVG per compared measurement."""
    out = Path(out)
    pairs = paired_values(measurements, references)
    written = [out / "measurements.json", out / "comparison.csv"]
    write_json(written[0], {s: measurements[s].to_dict() for s in sorted(measurements)})
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in comparison_rows(pairs, thresholds):
        w.writerow({k: _fmt(v) for k, v in row.items()})
    atomic_write(written[1], buf.getvalue())
    for name, (_, x, y) in pairs.items():
        p = out / "plots" / f"{re.sub(r'[^A-Za-z0-9_]+', '_', name)}.svg"
        atomic_write(p, _svg_figure(name, x, y))
        written.append(p)
    return written


# --------------------------------------------------------------------------
# synthetic datasets

def split_for(i: int) -> str:
    """Deterministic 7:1:2 patient split by study index."""
    r = i % 10
    return "train" if r < 7 else "val" if r == 7 else "test"


def write_phantom_dataset(out: str | Path, studies: int = 10, seed: int = 0, frames: int = 4,
                          variation: float = 1.0, degrade: dict[str, set] | None = None,
                          degrade_params: dict | None = None, views=("A2C", "A4C", "SAX")) -> Path:
    """Render jittered phantom studies to frames, truth label maps and a manifest.

    ``degrade`` maps view to a set of (study index, frame) pairs that get
    extra coarse speckle (``degrade_params``) on top of the rendering.
    Returns the manifest path.
    """
    from .phantom import degrade as degrade_frame, generate, jittered_study, study_measurements

    out = Path(out)
    dp = {"mode": "speckle", "strength": 2.0, "grain": 3.0, **(degrade_params or {})}
    entries, patients = [], {}
    for i in range(studies):
        study_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0] >> 1)
        specs = jittered_study(study_seed, frames=frames, variation=variation)
        pid = f"P{i:04d}"
        sid = f"S{i:04d}"
        rng = np.random.default_rng([seed, i, 1])
        ref = {k: v for k, v in study_measurements(specs).values().items()}
        patients[pid] = {"bsa": round(float(rng.uniform(1.6, 2.2)), 3), "sex": str(rng.choice(["F", "M"])),
                         "reference": ref}
        for view in views:
            imgs, truths, _ = generate(specs[view])
            vid = f"{sid}_{view}"
            for t, (img, truth) in enumerate(zip(imgs, truths)):
                if degrade and (i, t) in degrade.get(view, set()):
                    img = degrade_frame(img, dp["mode"], seed=study_seed + t,
                                        **{k: v for k, v in dp.items() if k != "mode"})
                meta = FrameMeta(view, float(frames), 60.0)
                image = out / "frames" / f"{vid}_{t:04d}.pgm"
                tpath = out / "truth" / f"{vid}_{t:04d}.pgm"
                write_frame(image, img, meta)
                write_labelmap(tpath, truth)
                entries.append({"patient": pid, "study": sid, "video": vid, "frame": t, "view": view,
                                "split": split_for(i), "image": os.path.relpath(image, out),
                                "truth": os.path.relpath(tpath, out), "fps": float(frames), "hr": 60.0})
    manifest = out / "manifest.json"
    write_json(manifest, {"frames": entries, "patients": patients})
    return manifest
