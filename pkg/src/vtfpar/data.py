"""Datasets on disk and the synthetic tracklet generator.

Frame file ("VTFIMG01"): magic, int32 LE height and width, then
row-major RGB float32 LE pixels in [0, 1].

Dataset layout: ``<root>/<split>/<tracklet_id>/`` holding numbered frame
files plus one ``labels.txt`` record; ``<root>/manifest.txt`` lists the
schema file and every tracklet per split.

The generator plants one fixed low-frequency spatial prototype per
attribute class: a frame is the sum of its tracklet's active prototypes
over a gray base, plus Gaussian pixel noise, clipped to [0, 1]. With
probability ``occlusion_p`` a frame is replaced by pure uniform noise
carrying no attribute signal, which is what makes single-frame
recognition strictly harder than multi-frame.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError
from .parallel import map_indexed
from .schema import AttributeSchema, load_schema, save_schema
from .vision import bilinear_resize

FRAME_MAGIC = b"VTFIMG01"
_PROTOTYPE_GRID = 6
_PROTOTYPE_AMPLITUDE = 0.3
_PROTOTYPE_CELL_RMS = 0.577  # cell scale of a uniform(-1, 1) draw
_BASE_LEVEL = 0.5


@dataclass(frozen=True)
class Tracklet:
    id: str
    frames: np.ndarray  # (t, h, w, 3) float32 in [0, 1]
    labels: np.ndarray  # (n_classes,) int8 in {0, 1}

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class Dataset:
    schema: AttributeSchema
    splits: dict[str, list[Tracklet]]
    root: Path

    def split(self, name: str) -> list[Tracklet]:
        if name not in self.splits:
            raise DataError(f"dataset has no split {name!r} (have {sorted(self.splits)})")
        return self.splits[name]


# -- frame files ------------------------------------------------------------


def write_frame(path, frame: np.ndarray) -> None:
    h, w, c = frame.shape
    if c != 3:
        raise DataError(f"frame must have 3 channels, got shape {frame.shape}")
    payload = (FRAME_MAGIC + struct.pack("<ii", h, w)
               + np.ascontiguousarray(frame, dtype="<f4").tobytes())
    Path(path).write_bytes(payload)


def read_frame(path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read frame {path}: {e}") from None
    head = len(FRAME_MAGIC) + 8
    if len(blob) < head:
        raise DataError(f"frame {path}: truncated header")
    if blob[: len(FRAME_MAGIC)] != FRAME_MAGIC:
        raise DataError(f"frame {path}: bad magic header")
    h, w = struct.unpack("<ii", blob[len(FRAME_MAGIC):head])
    if h <= 0 or w <= 0:
        raise DataError(f"frame {path}: bad dimensions {h}x{w}")
    expected = head + h * w * 3 * 4
    if len(blob) != expected:
        raise DataError(
            f"frame {path}: expected {expected} bytes for {h}x{w}, got {len(blob)}")
    frame = np.frombuffer(blob, dtype="<f4", offset=head).reshape(h, w, 3).copy()
    if not np.isfinite(frame).all():
        raise DataError(f"frame {path}: non-finite pixels")
    if frame.min() < 0.0 or frame.max() > 1.0:
        raise DataError(f"frame {path}: pixel values outside [0, 1]")
    return frame


# -- label records ------------------------------------------------------------


def _group_summary(schema: AttributeSchema, labels: np.ndarray) -> list[str]:
    lines = []
    for group, start, stop in schema.group_slices():
        active = [group.classes[i] for i in range(group.size) if labels[start + i]]
        lines.append(f"group {group.name} = {', '.join(active) if active else 'none'}")
    return lines


def write_labels(path, tracklet_id: str, labels: np.ndarray,
                 schema: AttributeSchema) -> None:
    lines = [f"tracklet = {tracklet_id}",
             "labels = " + " ".join(str(int(v)) for v in labels)]
    lines += _group_summary(schema, labels)  # human-diffable echo
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def validate_labels(labels: np.ndarray, schema: AttributeSchema, where: str) -> None:
    if labels.shape != (schema.n_classes,):
        raise DataError(
            f"{where}: {labels.size} labels for schema with {schema.n_classes} classes")
    if not np.isin(labels, (0, 1)).all():
        raise DataError(f"{where}: labels must be 0/1")
    for group, start, stop in schema.group_slices():
        if group.kind == "exclusive" and labels[start:stop].sum() != 1:
            raise DataError(
                f"{where}: exclusive group {group.name} must have exactly one "
                f"positive, got {int(labels[start:stop].sum())}")


def read_labels(path, schema: AttributeSchema) -> tuple[str, np.ndarray]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read labels {path}: {e}") from None
    tracklet_id = None
    labels = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("group "):
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "tracklet":
            tracklet_id = value
        elif key == "labels":
            try:
                labels = np.array([int(v) for v in value.split()], dtype=np.int8)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer label value") from None
        else:
            raise DataError(f"{path}:{lineno}: unexpected key {key!r}")
    if tracklet_id is None or labels is None:
        raise DataError(f"{path}: missing tracklet id or labels line")
    validate_labels(labels, schema, str(path))
    return tracklet_id, labels


# -- synthetic generation ------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    n_tracklets: int = 700
    frames_per_tracklet: int = 6
    height: int = 28
    width: int = 28
    noise_sigma: float = 0.1
    occlusion_p: float = 0.3
    split_fraction: float = 5.0 / 7.0  # train share: 500 / 200 by default
    seed: int = 0
    prototype_seed: int = 7

    def __post_init__(self):
        if self.n_tracklets < 2 or self.frames_per_tracklet < 1:
            raise UsageError(f"bad synthetic size {self}")
        if self.height < 2 or self.width < 2:
            raise UsageError("frames must be at least 2x2")
        if not 0.0 <= self.occlusion_p < 1.0:
            raise UsageError(f"occlusion_p must be in [0, 1), got {self.occlusion_p}")
        if self.noise_sigma < 0:
            raise UsageError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not 0.0 < self.split_fraction < 1.0:
            raise UsageError(
                f"split_fraction must be in (0, 1), got {self.split_fraction}")

    @property
    def n_train(self) -> int:
        n = int(round(self.n_tracklets * self.split_fraction))
        return min(max(n, 1), self.n_tracklets - 1)


def class_prototypes(spec: SyntheticSpec, schema: AttributeSchema) -> np.ndarray:
    """Fixed per-class low-frequency patterns, shape (n_classes, h, w, 3).

    The coarse grids are orthogonalized across classes (when the grid
    space is large enough) so the planted signals add without
    interfering; each grid is bilinearly upsampled to frame size.
    """
    c = schema.n_classes
    dim = _PROTOTYPE_GRID * _PROTOTYPE_GRID * 3
    rng = np.random.default_rng([spec.prototype_seed, 0])
    if c <= dim:
        q, _ = np.linalg.qr(rng.standard_normal((dim, c)))
        grids = (q.T * _PROTOTYPE_CELL_RMS * np.sqrt(dim)).reshape(
            c, _PROTOTYPE_GRID, _PROTOTYPE_GRID, 3)
    else:
        grids = rng.uniform(-1.0, 1.0, (c, _PROTOTYPE_GRID, _PROTOTYPE_GRID, 3))
    protos = np.empty((c, spec.height, spec.width, 3), dtype=np.float32)
    for i in range(c):
        protos[i] = _PROTOTYPE_AMPLITUDE * bilinear_resize(
            grids[i], spec.height, spec.width).astype(np.float32)
    return protos


def sample_labels(spec: SyntheticSpec, schema: AttributeSchema,
                  index: int) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, index, 0])
    labels = np.zeros(schema.n_classes, dtype=np.int8)
    for group, start, stop in schema.group_slices():
        if group.kind == "exclusive":
            labels[start + rng.integers(group.size)] = 1
        else:
            labels[start:stop] = rng.random(group.size) < 0.5
    return labels


def render_tracklet(spec: SyntheticSpec, schema: AttributeSchema, index: int,
                    prototypes: np.ndarray | None = None
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic tracklet ``index``: (frames, labels, occluded mask).

    Seeds derive from (master seed, tracklet index, frame index), so the
    output is independent of generation order, and the clean signal of a
    frame does not depend on ``occlusion_p``.
    """
    if prototypes is None:
        prototypes = class_prototypes(spec, schema)
    labels = sample_labels(spec, schema, index)
    clean = _BASE_LEVEL + prototypes[labels.astype(bool)].sum(axis=0)
    shape = (spec.height, spec.width, 3)
    frames = np.empty((spec.frames_per_tracklet,) + shape, dtype=np.float32)
    occluded = np.zeros(spec.frames_per_tracklet, dtype=bool)
    for f in range(spec.frames_per_tracklet):
        rng = np.random.default_rng([spec.seed, index, 1 + f])
        if rng.random() < spec.occlusion_p:
            occluded[f] = True
            frames[f] = rng.random(shape, dtype=np.float32)
        else:
            noise = rng.normal(0.0, spec.noise_sigma, shape)
            frames[f] = np.clip(clean + noise, 0.0, 1.0).astype(np.float32)
    return frames, labels, occluded


def generate(spec: SyntheticSpec, schema: AttributeSchema, out_dir) -> Path:
    """Write a full synthetic dataset tree; returns the manifest path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create dataset directory {out}: {e}") from None
    save_schema(schema, out / "schema.txt")
    prototypes = class_prototypes(spec, schema)
    n_train = spec.n_train
    entries: list[tuple[str, str]] = []
    for i in range(spec.n_tracklets):
        split = "train" if i < n_train else "test"
        entries.append((split, f"{split}/t{i:05d}"))

    def build(i: int) -> None:
        split, rel = entries[i]
        frames, labels, _ = render_tracklet(spec, schema, i, prototypes)
        tdir = out / rel
        tdir.mkdir(parents=True, exist_ok=True)
        for f in range(frames.shape[0]):
            write_frame(tdir / f"{f:06d}.vtf", frames[f])
        write_labels(tdir / "labels.txt", Path(rel).name, labels, schema)

    map_indexed(build, spec.n_tracklets)

    lines = ["# synthetic pedestrian attribute dataset",
             f"# tracklets={spec.n_tracklets} frames={spec.frames_per_tracklet} "
             f"sigma={spec.noise_sigma} occlusion={spec.occlusion_p} seed={spec.seed}",
             "schema = schema.txt", ""]
    for split in ("train", "test"):
        lines.append(f"[split {split}]")
        lines.extend(f"tracklet = {rel}" for s, rel in entries if s == split)
        lines.append("")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines), encoding="utf-8")
    return manifest


# -- loading ------------------------------------------------------------------


def _load_tracklet(tdir: Path, schema: AttributeSchema) -> Tracklet:
    if not tdir.is_dir():
        raise DataError(f"missing tracklet directory {tdir}")
    labels_path = tdir / "labels.txt"
    if not labels_path.exists():
        raise DataError(f"missing labels file {labels_path}")
    tracklet_id, labels = read_labels(labels_path, schema)
    frame_paths = sorted(tdir.glob("*.vtf"))
    if not frame_paths:
        raise DataError(f"tracklet {tdir} has no frame files")
    frames = [read_frame(p) for p in frame_paths]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1:
        raise DataError(f"tracklet {tdir}: frames have mixed shapes {sorted(shapes)}")
    return Tracklet(tracklet_id, np.stack(frames), labels)


def load_dataset(manifest_path) -> Dataset:
    """Parse a manifest and load every tracklet, validating all invariants."""
    manifest_path = Path(manifest_path)
    try:
        text = manifest_path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read manifest {manifest_path}: {e}") from None
    root = manifest_path.parent
    schema: AttributeSchema | None = None
    splits: dict[str, list[str]] = {}
    current: list[str] | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            parts = line[1:-1].split()
            if len(parts) != 2 or parts[0] != "split":
                raise DataError(
                    f"{manifest_path}:{lineno}: expected [split NAME], got {line!r}")
            current = splits.setdefault(parts[1], [])
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "schema":
            schema = load_schema(root / value)
        elif key == "tracklet":
            if current is None:
                raise DataError(
                    f"{manifest_path}:{lineno}: tracklet entry before any [split]")
            current.append(value)
        else:
            raise DataError(f"{manifest_path}:{lineno}: unexpected key {key!r}")
    if schema is None:
        raise DataError(f"{manifest_path}: no schema entry")
    if not splits:
        raise DataError(f"{manifest_path}: no splits declared")

    loaded: dict[str, list[Tracklet]] = {}
    for split, rels in splits.items():
        loaded[split] = [_load_tracklet(root / rel, schema) for rel in rels]
    return Dataset(schema=schema, splits=loaded, root=root)
