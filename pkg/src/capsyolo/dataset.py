"""Build the balanced two-source leaf-image dataset and its HDF5 container.

The pipeline: scan labeled directory trees (``<root>/<class label>/*.jpg``),
draw a per-class balanced selection from the sources, stratify a train/test
split, and write a single hierarchical container holding the resized image
arrays plus all metadata. A JSON manifest records every choice (seed,
targets, per-image source attribution, split) so a build is reproducible
and auditable.

Balancing rule: when a class exists in more than one source, draw evenly
across sources, never more from a source than its smallest peer could
match, topping up from the larger sources until the class target is hit.
Classes carried by a single source draw the whole target from it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png"}
CONTAINER_FORMAT_VERSION = 1
BOX_SIDECAR_SUFFIX = ".box"
WHOLE_IMAGE_BOX = (0.0, 0.0, 1.0, 1.0)


@dataclass
class SourceCorpus:
    """One labeled image tree: per-class file lists plus a skip report."""

    name: str
    root: Path
    images: dict                      # class label -> sorted list of Paths
    skipped: list = field(default_factory=list)   # (path, reason) pairs

    def class_counts(self) -> dict:
        return {label: len(files) for label, files in self.images.items()}

    @property
    def total(self) -> int:
        return sum(len(files) for files in self.images.values())


@dataclass
class ManifestEntry:
    """One selected image: where it came from and where it goes."""

    path: str                      # relative to the source root
    source: str
    label: str
    split: str | None = None       # "train" | "test" | None before split()
    severity: str = "unspecified"
    plant_part: str = "unspecified"


@dataclass
class DatasetManifest:
    """The full record of a balanced selection."""

    classes: list                  # ordered labels
    targets: dict                  # label -> target count
    seed: int
    source_roots: dict             # source name -> root path string
    entries: list                  # list of ManifestEntry, grouped by class
    train_fraction: float | None = None
    split_seed: int | None = None

    def per_class(self) -> dict:
        counts = {label: 0 for label in self.classes}
        for e in self.entries:
            counts[e.label] += 1
        return counts

    def to_json(self) -> str:
        return json.dumps({
            "classes": self.classes,
            "targets": self.targets,
            "seed": self.seed,
            "source_roots": self.source_roots,
            "train_fraction": self.train_fraction,
            "split_seed": self.split_seed,
            "entries": [vars(e) for e in self.entries],
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        raw = json.loads(text)
        return cls(
            classes=raw["classes"],
            targets=raw["targets"],
            seed=raw["seed"],
            source_roots=raw["source_roots"],
            entries=[ManifestEntry(**e) for e in raw["entries"]],
            train_fraction=raw.get("train_fraction"),
            split_seed=raw.get("split_seed"),
        )


def _decodable(path: Path) -> bool:
    try:
        with Image.open(path) as img:
            img.verify()
        return True
    except Exception:
        return False


def scan_sources(roots, names=None) -> list:
    """Scan labeled directory trees into :class:`SourceCorpus` objects.

    Subdirectory names are the class labels. Files that fail to decode are
    skipped and listed in the corpus skip report. A missing root raises
    ``FileNotFoundError``; a root with no usable images raises
    :class:`ValidationError`.
    """
    corpora = []
    names = names or [Path(r).name for r in roots]
    for root, name in zip(roots, names):
        root = Path(root)
        if not root.is_dir():
            raise FileNotFoundError(f"source root {root} does not exist")
        images = {}
        skipped = []
        for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            files = []
            for f in sorted(class_dir.iterdir()):
                if not f.is_file() or f.suffix.lower() not in IMAGE_EXTENSIONS:
                    continue
                if _decodable(f):
                    files.append(f)
                else:
                    skipped.append((str(f), "failed to decode"))
            if files:
                images[class_dir.name] = files
        if not images:
            raise ValidationError(f"source {name} at {root} contains no readable class images")
        corpora.append(SourceCorpus(name=name, root=root, images=images, skipped=skipped))
    return corpora


def _allocate(available: dict, target: int, label: str) -> dict:
    """Split ``target`` across sources, evenly, capped by availability.

    ``available`` maps source name -> count for sources that carry the
    class. Sources are filled smallest-first so no source is ever asked
    for more than an even share its peers could match.
    """
    allocation = {}
    remaining = target
    pending = sorted(available.items(), key=lambda kv: (kv[1], kv[0]))
    while pending:
        name, avail = pending.pop(0)
        share = -(-remaining // (len(pending) + 1))   # ceil division
        take = min(avail, share)
        allocation[name] = take
        remaining -= take
    if remaining > 0:
        raise ValidationError(
            f"class {label!r}: sources cannot supply the target "
            f"({target} requested, short by {remaining})"
        )
    return allocation


def balance_merge(sources, targets: dict, seed: int = 0) -> DatasetManifest:
    """Draw the per-class targets from the sources into a manifest.

    Selection within a source is uniform-random without replacement under
    ``seed``; the seed is recorded in the manifest so the draw can be
    replayed bit for bit.
    """
    rng = np.random.default_rng(seed)
    entries = []
    for label, target in targets.items():
        available = {s.name: len(s.images.get(label, ())) for s in sources
                     if s.images.get(label)}
        if not available:
            raise ValidationError(f"class {label!r}: no source carries any images")
        allocation = _allocate(available, int(target), label)
        for source in sources:
            take = allocation.get(source.name, 0)
            if take == 0:
                continue
            files = source.images[label]
            picked = rng.choice(len(files), size=take, replace=False)
            for idx in sorted(picked):
                entries.append(ManifestEntry(
                    path=str(files[idx].relative_to(source.root)),
                    source=source.name,
                    label=label,
                ))
    return DatasetManifest(
        classes=list(targets.keys()),
        targets={k: int(v) for k, v in targets.items()},
        seed=seed,
        source_roots={s.name: str(s.root) for s in sources},
        entries=entries,
    )


def split(manifest: DatasetManifest, train_fraction: float = 0.8, seed: int = 0) -> DatasetManifest:
    """Assign a stratified train/test split in place and return the manifest.

    Per class, ``round(train_fraction * n)`` images go to train (clamped so
    both splits are non-empty); the shuffle is deterministic under ``seed``.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValidationError(f"train_fraction {train_fraction} outside (0, 1)")
    rng = np.random.default_rng(seed)
    by_class = {label: [] for label in manifest.classes}
    for i, entry in enumerate(manifest.entries):
        by_class[entry.label].append(i)
    for label in manifest.classes:
        indices = by_class[label]
        n = len(indices)
        if n < 2:
            raise ValidationError(f"class {label!r} has {n} image(s); need at least 2 to split")
        n_train = int(np.clip(round(train_fraction * n), 1, n - 1))
        order = rng.permutation(n)
        chosen_train = {indices[j] for j in order[:n_train]}
        for i in indices:
            manifest.entries[i].split = "train" if i in chosen_train else "test"
    manifest.train_fraction = train_fraction
    manifest.split_seed = seed
    return manifest


def load_rgb(path, image_size) -> np.ndarray:
    """Decode an image file to float32 [H, W, 3] scaled to [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((image_size[1], image_size[0]), Image.BILINEAR)
    return np.asarray(rgb, dtype=np.float32) / 255.0


def _sidecar_box(image_path: Path):
    """Optional per-image box annotation: 4 normalized floats in a sidecar file."""
    sidecar = image_path.with_suffix(BOX_SIDECAR_SUFFIX)
    if not sidecar.is_file():
        return WHOLE_IMAGE_BOX
    parts = sidecar.read_text().split()
    if len(parts) != 4:
        raise ValidationError(f"{sidecar}: expected 4 numbers, found {len(parts)}")
    box = tuple(float(p) for p in parts)
    if not (0 <= box[0] <= box[2] <= 1 and 0 <= box[1] <= box[3] <= 1):
        raise ValidationError(f"{sidecar}: box {box} not normalized/ordered")
    return box


def write_container(manifest: DatasetManifest, out_path, image_size=(128, 128)) -> None:
    """Resize every selected image and write the single-file container.

    Layout: ``/images`` float32 [N,H,W,3] in [0,1], ``/labels`` int64,
    ``/boxes`` float64 [N,4] (whole-image unless a sidecar overrides),
    ``/meta`` with class names, per-image source/filename/severity/part,
    and the train mask. Requires the manifest to be split already.
    """
    import h5py

    if any(e.split is None for e in manifest.entries):
        raise ValidationError("manifest has unsplit entries; run split() first")
    n = len(manifest.entries)
    if n == 0:
        raise ValidationError("manifest selects no images")

    images = np.zeros((n, image_size[0], image_size[1], 3), dtype=np.float32)
    labels = np.zeros(n, dtype=np.int64)
    boxes = np.zeros((n, 4), dtype=np.float64)
    train_mask = np.zeros(n, dtype=np.int8)
    class_index = {label: i for i, label in enumerate(manifest.classes)}
    sources, filenames, severities, parts = [], [], [], []

    for i, entry in enumerate(manifest.entries):
        image_path = Path(manifest.source_roots[entry.source]) / entry.path
        if not image_path.is_file():
            raise ValidationError(f"manifest names missing file {image_path}")
        images[i] = load_rgb(image_path, image_size)
        labels[i] = class_index[entry.label]
        boxes[i] = _sidecar_box(image_path)
        train_mask[i] = 1 if entry.split == "train" else 0
        sources.append(entry.source)
        filenames.append(entry.path)
        severities.append(entry.severity)
        parts.append(entry.plant_part)

    text = h5py.string_dtype(encoding="utf-8")
    with h5py.File(out_path, "w") as fh:
        fh.attrs["format_version"] = CONTAINER_FORMAT_VERSION
        fh.attrs["seed"] = manifest.seed
        fh.create_dataset("images", data=images)
        fh.create_dataset("labels", data=labels)
        fh.create_dataset("boxes", data=boxes)
        meta = fh.create_group("meta")
        meta.create_dataset("classes", data=np.array(manifest.classes, dtype=text))
        meta.create_dataset("source", data=np.array(sources, dtype=text))
        meta.create_dataset("filename", data=np.array(filenames, dtype=text))
        meta.create_dataset("severity", data=np.array(severities, dtype=text))
        meta.create_dataset("plant_part", data=np.array(parts, dtype=text))
        meta.create_dataset("train_mask", data=train_mask)
        meta.create_dataset("manifest_json", data=manifest.to_json())


@dataclass
class ContainerData:
    """In-memory view of a container file."""

    images: np.ndarray
    labels: np.ndarray
    boxes: np.ndarray
    train_mask: np.ndarray
    classes: list
    source: list
    filename: list
    severity: list
    plant_part: list
    seed: int
    manifest_json: str

    @property
    def train_indices(self) -> np.ndarray:
        return np.flatnonzero(self.train_mask == 1)

    @property
    def test_indices(self) -> np.ndarray:
        return np.flatnonzero(self.train_mask == 0)


def read_container(path) -> ContainerData:
    """Load a container file written by :func:`write_container`."""
    import h5py

    with h5py.File(path, "r") as fh:
        version = int(fh.attrs.get("format_version", -1))
        if version != CONTAINER_FORMAT_VERSION:
            raise ValidationError(f"{path}: container format {version} unsupported")
        meta = fh["meta"]
        decode = lambda ds: [s.decode("utf-8") if isinstance(s, bytes) else str(s) for s in ds[()]]
        data = ContainerData(
            images=fh["images"][()],
            labels=fh["labels"][()],
            boxes=fh["boxes"][()],
            train_mask=meta["train_mask"][()],
            classes=decode(meta["classes"]),
            source=decode(meta["source"]),
            filename=decode(meta["filename"]),
            severity=decode(meta["severity"]),
            plant_part=decode(meta["plant_part"]),
            seed=int(fh.attrs["seed"]),
            manifest_json=meta["manifest_json"][()].decode("utf-8")
            if isinstance(meta["manifest_json"][()], bytes) else str(meta["manifest_json"][()]),
        )
    lead = {data.images.shape[0], data.labels.shape[0], data.boxes.shape[0], data.train_mask.shape[0]}
    if len(lead) != 1:
        raise ValidationError(f"{path}: images/labels/boxes/split lengths disagree: {lead}")
    return data


@dataclass(frozen=True)
class BalanceReport:
    """Outcome of :func:`validate_balance`."""

    per_class: dict                 # label -> count
    per_source: dict                # source -> count
    max_min_ratio: float | None
    flags: tuple
    fatal: bool


def validate_balance(manifest: DatasetManifest, max_ratio: float = 3.0) -> BalanceReport:
    """Check class balance; always returns a report, flagging problems.

    A class with zero images is fatal; a max/min class-count ratio above
    ``max_ratio`` is flagged.
    """
    counts = manifest.per_class()
    per_source = {}
    for e in manifest.entries:
        per_source[e.source] = per_source.get(e.source, 0) + 1

    flags = []
    fatal = False
    zero = [label for label, c in counts.items() if c == 0]
    if zero:
        flags.append(f"classes with zero images: {', '.join(zero)}")
        fatal = True

    nonzero = [c for c in counts.values() if c > 0]
    ratio = max(nonzero) / min(nonzero) if nonzero else None
    if ratio is not None and ratio > max_ratio:
        flags.append(f"max/min class ratio {ratio:.2f} exceeds bound {max_ratio}")

    for label, target in manifest.targets.items():
        if counts.get(label, 0) != target:
            flags.append(f"class {label!r} has {counts.get(label, 0)} images, target {target}")

    return BalanceReport(
        per_class=counts,
        per_source=per_source,
        max_min_ratio=ratio,
        flags=tuple(flags),
        fatal=fatal,
    )
