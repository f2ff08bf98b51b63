"""Train a small classifier on synthetic data, evaluate it, and reload the
best checkpoint.

The model is deliberately tiny and the dataset synthetic, so the script
finishes in well under a minute on CPU while exercising the full pipeline:
seed, split, train, checkpoint, evaluate.

Run from the repository root:

    python3 demos/03_train_and_evaluate.py
"""

import tempfile
from pathlib import Path

import torch

from shuffle_histo import (
    ModelConfig,
    SplitSpec,
    TrainConfig,
    evaluate,
    load_checkpoint,
    make_splits,
    run_training,
    scan_dataset,
    synth_dataset,
)


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp) / "synthetic"
        run_dir = Path(tmp) / "run"

        synth_dataset(root, n_per_class=24, magnifications=(40,), seed=3)
        manifest = scan_dataset(root)
        train_recs, val_recs, test_recs = make_splits(manifest, SplitSpec(seed=0))
        print(f"split sizes: {len(train_recs)} train / {len(val_recs)} val / {len(test_recs)} test")

        # A narrow backbone and a single attention stage keep this quick;
        # the full-size defaults are ModelConfig() with no overrides.
        model_cfg = ModelConfig(
            backbone_name="mobilenet_v1_025",
            freeze_backbone_epochs=0,
            stem_channels=16,
            num_rdab_stages=1,
            head_channels=8,
        )
        train_cfg = TrainConfig(epochs=16, batch_size=8, learning_rate=1e-3, seed=0)

        print("\n== training ==")
        state, ckpt_base = run_training(
            run_dir, root, train_recs, val_recs, test_recs,
            model_cfg, train_cfg, log=print,
        )
        print(f"best val accuracy {state.best_val_accuracy:.2f}%")

        print("\n== run directory ==")
        for path in sorted(run_dir.iterdir()):
            print(" ", path.name)

        # The checkpoint restores the exact best model; its metadata rides
        # along as model.checkpoint_meta.
        print("\n== evaluate reloaded checkpoint ==")
        model = load_checkpoint(str(ckpt_base))
        meta = model.checkpoint_meta
        print("checkpoint epoch:", meta["epoch"], "seed:", meta["seed"])
        with torch.no_grad():
            report = evaluate(model, test_recs, magnification=40, root=root)
        print(f"test accuracy {report.accuracy:.2f}%  "
              f"precision {report.precision:.2f}%  "
              f"recall {report.recall:.2f}%  "
              f"f1 {report.f1:.2f}%")
        c = report.counts
        print(f"confusion: tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn}")


if __name__ == "__main__":
    main()
