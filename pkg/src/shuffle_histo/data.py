"""Dataset ingestion: filename parsing, directory scanning, patient-aware
splitting, preprocessing to the 212x212 network input, light augmentation,
and a synthetic desk-scale dataset generator.

Manifests persist as CSV with columns
``path,label,subtype,patient_id,magnification,width,height``; split files are
one relative path per line (train.txt / val.txt / test.txt).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import cv2
import numpy as np
import torch
from PIL import Image

from .errors import (
    EmptyDatasetError,
    FilenameParseError,
    InvalidImageError,
    SplitInfeasibleError,
)

__all__ = [
    "MAGNIFICATIONS",
    "BENIGN_SUBTYPES",
    "MALIGNANT_SUBTYPES",
    "ImageRecord",
    "ParsedName",
    "DatasetManifest",
    "SplitSpec",
    "parse_filename",
    "scan_dataset",
    "make_splits",
    "write_split_files",
    "read_split_file",
    "preprocess_image",
    "load_rgb",
    "augment",
    "sample_augment_ops",
    "synth_dataset",
]

MAGNIFICATIONS = (40, 100, 200, 400)

BENIGN_SUBTYPES = {
    "A": "adenosis",
    "F": "fibroadenoma",
    "PT": "phyllodes_tumor",
    "TA": "tubular_adenoma",
}
MALIGNANT_SUBTYPES = {
    "DC": "ductal_carcinoma",
    "LC": "lobular_carcinoma",
    "MC": "mucinous_carcinoma",
    "PC": "papillary_carcinoma",
}

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".tif", ".tiff"}

# Channel statistics of the backbone's pretraining corpus, applied after
# scaling pixels to [0, 1].
PRETRAIN_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
PRETRAIN_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

INPUT_SIZE = 212


@dataclass(frozen=True)
class ParsedName:
    label: str
    subtype: str
    patient_id: str
    magnification: int
    sequence: int


@dataclass(frozen=True)
class ImageRecord:
    """One labeled image; ``path`` is relative to the dataset root."""

    path: str
    label: str
    subtype: str
    patient_id: str
    magnification: int
    width: int
    height: int

    def __post_init__(self):
        if self.label not in ("benign", "malignant"):
            raise ValueError(f"label must be benign/malignant, got {self.label!r}")
        if self.magnification not in MAGNIFICATIONS:
            raise ValueError(
                f"magnification must be one of {MAGNIFICATIONS}, "
                f"got {self.magnification}"
            )
        table = BENIGN_SUBTYPES if self.label == "benign" else MALIGNANT_SUBTYPES
        if self.subtype not in table:
            raise ValueError(
                f"subtype {self.subtype!r} inconsistent with label {self.label!r}"
            )


def parse_filename(name: str) -> ParsedName:
    """Parse ``SOB_<B|M>_<SUBTYPE>-<patient>-<mag>-<seq>.<ext>``.

    The patient field may itself contain dashes; magnification and sequence
    are the last two dash-separated fields.
    """
    stem = name
    for suffix in IMAGE_SUFFIXES:
        if name.lower().endswith(suffix):
            stem = name[: -len(suffix)]
            break
    else:
        raise FilenameParseError(name, "extension", "not a recognised image suffix")

    parts = stem.split("_", 2)
    if len(parts) != 3 or parts[0] != "SOB":
        raise FilenameParseError(name, "prefix", "expected 'SOB_<B|M>_...'")
    class_code = parts[1]
    if class_code not in ("B", "M"):
        raise FilenameParseError(name, "class code", f"got {class_code!r}")
    label = "benign" if class_code == "B" else "malignant"

    rest = parts[2]
    if "-" not in rest:
        raise FilenameParseError(name, "subtype", "missing '-' separators")
    subtype, remainder = rest.split("-", 1)
    table = BENIGN_SUBTYPES if label == "benign" else MALIGNANT_SUBTYPES
    if subtype not in table:
        raise FilenameParseError(
            name, "subtype", f"{subtype!r} is not a {label} subtype code"
        )

    pieces = remainder.rsplit("-", 2)
    if len(pieces) != 3:
        raise FilenameParseError(name, "patient id", "too few '-' separated fields")
    patient_id, mag_text, seq_text = pieces
    if not patient_id:
        raise FilenameParseError(name, "patient id", "empty")
    try:
        magnification = int(mag_text)
    except ValueError:
        raise FilenameParseError(name, "magnification", f"{mag_text!r} is not an integer")
    if magnification not in MAGNIFICATIONS:
        raise FilenameParseError(
            name, "magnification", f"{magnification} not in {MAGNIFICATIONS}"
        )
    try:
        sequence = int(seq_text)
    except ValueError:
        raise FilenameParseError(name, "sequence", f"{seq_text!r} is not an integer")
    return ParsedName(label, subtype, patient_id, magnification, sequence)


@dataclass
class DatasetManifest:
    """All parseable images under one root, plus per-(magnification, label)
    tallies; files that failed to parse are kept in ``skipped``."""

    root: str
    records: list[ImageRecord]
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        paths = [r.path for r in self.records]
        if len(set(paths)) != len(paths):
            dupes = sorted({p for p in paths if paths.count(p) > 1})
            raise ValueError(f"duplicate paths in manifest: {dupes[:5]}")

    @property
    def counts(self) -> dict[tuple[int, str], int]:
        tally: dict[tuple[int, str], int] = {}
        for r in self.records:
            key = (r.magnification, r.label)
            tally[key] = tally.get(key, 0) + 1
        return tally

    def count(self, magnification: Optional[int] = None, label: Optional[str] = None) -> int:
        return sum(
            1
            for r in self.records
            if (magnification is None or r.magnification == magnification)
            and (label is None or r.label == label)
        )

    def at_magnification(self, magnification: int) -> list[ImageRecord]:
        return [r for r in self.records if r.magnification == magnification]

    def save_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["path", "label", "subtype", "patient_id", "magnification", "width", "height"]
            )
            for r in self.records:
                writer.writerow(
                    [r.path, r.label, r.subtype, r.patient_id, r.magnification, r.width, r.height]
                )

    @classmethod
    def load_csv(cls, path: str | Path, root: str = ".") -> "DatasetManifest":
        records = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                records.append(
                    ImageRecord(
                        path=row["path"],
                        label=row["label"],
                        subtype=row["subtype"],
                        patient_id=row["patient_id"],
                        magnification=int(row["magnification"]),
                        width=int(row["width"]),
                        height=int(row["height"]),
                    )
                )
        return cls(root=str(root), records=records)


def scan_dataset(root: str | Path) -> DatasetManifest:
    """Scan a directory tree for convention-named images.

    Works on the nested public-release layout and on flat directories alike
    (only filenames matter). Unparseable image files are collected in
    ``manifest.skipped`` and summarised in a warning, never silently dropped.
    """
    root = Path(root)
    if not root.is_dir():
        raise EmptyDatasetError(f"dataset root {str(root)!r} is not a directory")
    records: list[ImageRecord] = []
    skipped: list[tuple[str, str]] = []
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        rel = path.relative_to(root).as_posix()
        try:
            parsed = parse_filename(path.name)
        except FilenameParseError as exc:
            skipped.append((rel, str(exc)))
            continue
        with Image.open(path) as img:
            width, height = img.size
        records.append(
            ImageRecord(
                path=rel,
                label=parsed.label,
                subtype=parsed.subtype,
                patient_id=parsed.patient_id,
                magnification=parsed.magnification,
                width=width,
                height=height,
            )
        )
    if not records:
        raise EmptyDatasetError(
            f"no convention-named images under {str(root)!r} "
            f"({len(skipped)} files skipped)"
        )
    if skipped:
        warnings.warn(
            f"skipped {len(skipped)} unparseable files under {str(root)!r}",
            stacklevel=2,
        )
    return DatasetManifest(root=str(root), records=records, skipped=skipped)


@dataclass(frozen=True)
class SplitSpec:
    """Train/val/test fractions plus grouping and seeding choices."""

    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    group_by_patient: bool = True
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ValueError(f"ratios must be three positive fractions, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {self.ratios}")


def _walk_assign(
    units: list[tuple[str, int, list[ImageRecord]]],
    ratios: tuple[float, float, float],
) -> list[list[ImageRecord]]:
    """Assign ordered units (patients or single records) to three bins so the
    cumulative image counts track the requested fractions."""
    total = sum(n for _, n, _ in units)
    target_train = ratios[0] * total
    target_trainval = (ratios[0] + ratios[1]) * total
    bins: list[list[ImageRecord]] = [[], [], []]
    cum = 0
    for _, n, recs in units:
        if cum + 1e-9 < target_train:
            bins[0].extend(recs)
        elif cum + 1e-9 < target_trainval:
            bins[1].extend(recs)
        else:
            bins[2].extend(recs)
        cum += n
    return bins


def make_splits(
    manifest: DatasetManifest,
    spec: SplitSpec,
    magnification: Optional[int] = None,
) -> tuple[list[ImageRecord], list[ImageRecord], list[ImageRecord]]:
    """Deterministic stratified train/val/test split.

    With ``group_by_patient`` every patient lands in exactly one split; class
    proportions are preserved per class by construction (best effort under
    patient grouping). The three splits partition the input and are all
    non-empty, else :class:`SplitInfeasibleError` is raised.
    """
    records = (
        manifest.records
        if magnification is None
        else manifest.at_magnification(magnification)
    )
    if not records:
        raise EmptyDatasetError(
            f"manifest has no records at magnification {magnification}"
        )
    rng = np.random.default_rng(spec.seed)

    bins: list[list[ImageRecord]] = [[], [], []]
    for label in ("benign", "malignant"):
        class_records = [r for r in records if r.label == label]
        if not class_records:
            continue
        if spec.group_by_patient:
            by_patient: dict[str, list[ImageRecord]] = {}
            for r in class_records:
                by_patient.setdefault(r.patient_id, []).append(r)
            keys = sorted(by_patient)
            order = rng.permutation(len(keys))
            units = [
                (keys[i], len(by_patient[keys[i]]), by_patient[keys[i]])
                for i in order
            ]
        else:
            ordered = sorted(class_records, key=lambda r: r.path)
            order = rng.permutation(len(ordered))
            units = [(ordered[i].path, 1, [ordered[i]]) for i in order]
        class_bins = _walk_assign(units, spec.ratios)
        for b, cb in zip(bins, class_bins):
            b.extend(cb)

    # Guarantee three non-empty splits by stealing whole units from the
    # fullest bin; refuse if there are not enough units to go around.
    unit_key = (lambda r: r.patient_id) if spec.group_by_patient else (lambda r: r.path)
    n_units = len({unit_key(r) for r in records})
    if n_units < 3:
        raise SplitInfeasibleError(
            f"need at least 3 {'patients' if spec.group_by_patient else 'records'} "
            f"for three non-empty splits, got {n_units}"
        )
    for i in (1, 2):
        if bins[i]:
            continue
        donor = max(range(3), key=lambda j: len({unit_key(r) for r in bins[j]}))
        donor_units = sorted({unit_key(r) for r in bins[donor]})
        if len(donor_units) < 2:
            raise SplitInfeasibleError("not enough units to fill all three splits")
        moved = donor_units[-1]
        bins[i] = [r for r in bins[donor] if unit_key(r) == moved]
        bins[donor] = [r for r in bins[donor] if unit_key(r) != moved]
    if not bins[0]:
        raise SplitInfeasibleError("train split came out empty")

    for b in bins:
        b.sort(key=lambda r: r.path)
    return bins[0], bins[1], bins[2]


def write_split_files(
    run_dir: str | Path,
    train: Sequence[ImageRecord],
    val: Sequence[ImageRecord],
    test: Sequence[ImageRecord],
) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    for name, recs in (("train", train), ("val", val), ("test", test)):
        with open(run_dir / f"{name}.txt", "w") as fh:
            for r in recs:
                fh.write(r.path + "\n")


def read_split_file(path: str | Path, manifest: DatasetManifest) -> list[ImageRecord]:
    by_path = {r.path: r for r in manifest.records}
    records = []
    with open(path) as fh:
        for line in fh:
            rel = line.strip()
            if not rel:
                continue
            if rel not in by_path:
                raise EmptyDatasetError(f"split entry {rel!r} not in manifest")
            records.append(by_path[rel])
    return records


def load_rgb(path: str | Path) -> np.ndarray:
    """Load an image file as an HxWx3 uint8 RGB array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def preprocess_image(image: np.ndarray) -> torch.Tensor:
    """Resize (area interpolation) so the longer side is 212, zero-pad
    symmetrically to 212x212 (odd remainder goes bottom/right), scale to
    [0, 1], standardize with the pretraining channel statistics, and return
    a 3x212x212 float tensor.
    """
    if not isinstance(image, np.ndarray) or image.ndim != 3 or image.shape[2] != 3:
        raise InvalidImageError(
            f"expected an HxWx3 RGB array, got "
            f"{getattr(image, 'shape', type(image).__name__)}"
        )
    h, w = image.shape[:2]
    if h == 0 or w == 0:
        raise InvalidImageError("image has a zero dimension")

    if image.dtype == np.uint8:
        img = image.astype(np.float32) / 255.0
    else:
        img = image.astype(np.float32)

    if (h, w) != (INPUT_SIZE, INPUT_SIZE):
        if h >= w:
            new_h = INPUT_SIZE
            new_w = max(1, int(w * INPUT_SIZE // h))
        else:
            new_w = INPUT_SIZE
            new_h = max(1, int(h * INPUT_SIZE // w))
        img = cv2.resize(img, (new_w, new_h), interpolation=cv2.INTER_AREA)
    else:
        new_h, new_w = h, w

    pad_v = INPUT_SIZE - new_h
    pad_h = INPUT_SIZE - new_w
    top, left = pad_v // 2, pad_h // 2
    img = np.pad(
        img,
        ((top, pad_v - top), (left, pad_h - left), (0, 0)),
        mode="constant",
    )
    img = (img - PRETRAIN_MEAN) / PRETRAIN_STD
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))


def sample_augment_ops(seed: int) -> tuple[bool, bool, int]:
    """Draw the (horizontal flip, vertical flip, quarter-turns) triple used by
    :func:`augment`; quarter-turns is 0 when the rotation coin lands tails."""
    rng = np.random.default_rng(seed)
    hflip = bool(rng.random() < 0.5)
    vflip = bool(rng.random() < 0.5)
    k = int(rng.integers(1, 4)) if rng.random() < 0.5 else 0
    return hflip, vflip, k


def augment(image: np.ndarray, seed: int) -> np.ndarray:
    """Label-preserving geometric augmentation, deterministic per seed:
    horizontal flip, vertical flip, and a quarter-turn rotation, each applied
    independently with probability one half."""
    hflip, vflip, k = sample_augment_ops(seed)
    out = image
    if hflip:
        out = np.flip(out, axis=1)
    if vflip:
        out = np.flip(out, axis=0)
    if k:
        out = np.rot90(out, k, axes=(0, 1))
    return np.ascontiguousarray(out)


def _blob_field(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth low-frequency field: a few broad Gaussian bumps."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
    out = np.zeros((size, size), dtype=np.float32)
    for _ in range(int(rng.integers(3, 6))):
        cx, cy = rng.random(2)
        sigma = 0.18 + 0.17 * rng.random()
        amp = 0.5 + 0.5 * rng.random()
        out += amp * np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2)))
    out -= out.min()
    peak = out.max()
    if peak > 0:
        out /= peak
    return out


def _speckle_field(rng: np.random.Generator, size: int) -> np.ndarray:
    """Grainy high-frequency field: white noise over a mild background."""
    base = 0.5 + 0.2 * (rng.random() - 0.5)
    noise = rng.standard_normal((size, size)).astype(np.float32)
    out = base + 0.28 * noise
    return np.clip(out, 0.0, 1.0)


def _render(field: np.ndarray) -> np.ndarray:
    """Map a [0, 1] scalar field to an eosin-like RGB image."""
    r = 0.55 + 0.40 * field
    g = 0.25 + 0.35 * field
    b = 0.45 + 0.40 * field
    rgb = np.stack([r, g, b], axis=-1)
    return (np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)


def synth_dataset(
    root: str | Path,
    n_per_class: int,
    magnifications: Iterable[int] = MAGNIFICATIONS,
    seed: int = 0,
    image_size: int = 128,
) -> Path:
    """Materialize a small convention-named dataset: benign images are smooth
    blob textures, malignant images are high-frequency speckle, so a small
    CNN (or a frequency-band statistic) can separate them. Deterministic per
    seed; images are spread over at least four synthetic patients per class
    when ``n_per_class`` allows."""
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    magnifications = tuple(magnifications)
    for mag in magnifications:
        if mag not in MAGNIFICATIONS:
            raise ValueError(f"magnification {mag} not in {MAGNIFICATIONS}")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)

    n_patients = min(n_per_class, 8 if n_per_class >= 8 else max(4, n_per_class))
    class_plan = (
        ("benign", "B", 0, sorted(BENIGN_SUBTYPES), _blob_field),
        ("malignant", "M", 1, sorted(MALIGNANT_SUBTYPES), _speckle_field),
    )
    for label, code, class_idx, subtypes, make_field in class_plan:
        patients = [f"9{class_idx}-{7001 + i}" for i in range(n_patients)]
        for mag_idx, mag in enumerate(magnifications):
            seq_counter: dict[str, int] = {}
            for j in range(n_per_class):
                patient = patients[j % n_patients]
                subtype = subtypes[(j % n_patients) % len(subtypes)]
                seq = seq_counter.get(patient, 0) + 1
                seq_counter[patient] = seq
                rng = np.random.default_rng([seed, class_idx, mag_idx, j])
                pixels = _render(make_field(rng, image_size))
                name = f"SOB_{code}_{subtype}-{patient}-{mag}-{seq:03d}.png"
                subtype_name = {**BENIGN_SUBTYPES, **MALIGNANT_SUBTYPES}[subtype]
                out_dir = (
                    root
                    / label
                    / "SOB"
                    / subtype_name
                    / f"SOB_{code}_{subtype}_{patient}"
                    / f"{mag}X"
                )
                out_dir.mkdir(parents=True, exist_ok=True)
                Image.fromarray(pixels).save(out_dir / name)
    return root
