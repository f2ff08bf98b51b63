"""Generate a small synthetic dataset, scan it, split it by patient, and
preprocess one image into a network-ready tensor.

Run from the repository root:

    python3 demos/02_synthetic_dataset.py
"""

import tempfile
from pathlib import Path

from shuffle_histo import (
    SplitSpec,
    make_splits,
    preprocess_image,
    scan_dataset,
    synth_dataset,
)
from shuffle_histo.data import augment, load_rgb


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp) / "synthetic"

        # Benign images are smooth blob textures, malignant images are
        # high-frequency speckle. Filenames follow the BreaKHis convention
        # so the scanner treats them like real slide images.
        synth_dataset(root, n_per_class=12, magnifications=(40, 100), seed=3)

        manifest = scan_dataset(root)
        print("== scan ==")
        print("images:", len(manifest.records))
        for mag in (40, 100):
            n_b = manifest.count(magnification=mag, label="benign")
            n_m = manifest.count(magnification=mag, label="malignant")
            print(f"  {mag}x: {n_b} benign / {n_m} malignant")
        patients = sorted({r.patient_id for r in manifest.records})
        print("patients:", len(patients))
        print()

        # Patient-grouped split: no patient appears in two splits, so the
        # test score measures generalization to unseen patients.
        print("== patient-grouped split ==")
        train, val, test = make_splits(manifest, SplitSpec(seed=0))
        for name, part in (("train", train), ("val", val), ("test", test)):
            ids = {r.patient_id for r in part}
            print(f"  {name}: {len(part):3d} images, {len(ids)} patients")
        train_ids = {r.patient_id for r in train}
        val_ids = {r.patient_id for r in val}
        test_ids = {r.patient_id for r in test}
        disjoint = not (train_ids & val_ids or train_ids & test_ids or val_ids & test_ids)
        print("  patient sets disjoint:", disjoint)
        print()

        # Preprocess: resize the longer side to 212, pad square, normalize
        # with the pretrained-backbone statistics.
        print("== preprocess ==")
        record = train[0]
        image = load_rgb(root / record.path)
        tensor = preprocess_image(image)
        print("source image:", image.shape, image.dtype)
        print("tensor      :", tuple(tensor.shape), tensor.dtype)
        print("value range : [%.3f, %.3f]" % (float(tensor.min()), float(tensor.max())))
        print()

        # Augmentation samples flips and quarter-turn rotations from a seed,
        # so an epoch's augmentation is reproducible.
        print("== augment ==")
        for seed in (4, 29, 9):
            out = augment(image, seed=seed)
            changed = "changed" if (out != image).any() else "identity"
            print(f"  seed {seed:2d}: {changed}, shape {out.shape}")


if __name__ == "__main__":
    main()
