#!/usr/bin/env python3
"""
Utility script to check the status of a training run
"""

import csv
import os
import sys

from checkpoint import load_checkpoint
from errors import CheckpointError


def read_metrics(metrics_file):
    """Rows of metrics.log as dicts with numeric values"""
    rows = []
    with open(metrics_file, 'r', newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f, delimiter='\t')
        for row in reader:
            rows.append({
                "step": int(row["step"]),
                "epoch": int(row["epoch"]),
                "train_loss": float(row["train_loss"]),
                "dev_loss": float(row["dev_loss"]),
                "lr": float(row["lr"]),
            })
    return rows


def check_run_status(run_dir, target_epochs=None):
    """Print checkpoints, best checkpoint and metrics progress of a run directory.

    Returns a summary dict (also used by tests).
    """
    summary = {"checkpoints": [], "best_epoch": None, "last_step": None, "epochs_logged": 0}

    if not os.path.isdir(run_dir):
        print(f"✗ Run directory not found: {run_dir}")
        return summary

    ckpt_dir = os.path.join(run_dir, "checkpoints")
    if os.path.isdir(ckpt_dir):
        summary["checkpoints"] = sorted(
            name for name in os.listdir(ckpt_dir) if name.endswith(".ckpt")
        )
        print(f"✓ Checkpoints: {len(summary['checkpoints'])}")
    else:
        print("✗ No checkpoints directory found")

    best_path = os.path.join(ckpt_dir, "best.ckpt")
    if os.path.exists(best_path):
        try:
            metadata = load_checkpoint(best_path).metadata
            summary["best_epoch"] = metadata.get("epoch", 1) - 1
            print(f"✓ Best checkpoint: epoch {summary['best_epoch']}, step {metadata.get('step', 0)}")
        except CheckpointError as e:
            print(f"✗ Best checkpoint unreadable: {e}")
    else:
        print("✗ No best checkpoint yet")

    metrics_file = os.path.join(run_dir, "metrics.log")
    rows = read_metrics(metrics_file) if os.path.exists(metrics_file) else []
    if not rows:
        print("✗ No metrics logged yet")
        return summary

    last = rows[-1]
    summary["last_step"] = last["step"]
    summary["epochs_logged"] = len(rows)
    print(f"\n📊 Status Summary:")
    print(f"  Last step: {last['step']}")
    print(f"  Last epoch: {last['epoch']}")
    print(f"  Train loss: {last['train_loss']:.4f}")
    print(f"  Dev loss: {last['dev_loss']:.4f}")
    if target_epochs:
        percentage = min(last["epoch"] / target_epochs, 1.0) * 100
        print(f"  Progress: {percentage:.1f}%")

    if len(rows) > 1:
        print(f"\n📝 Dev loss by epoch:")
        for row in rows[-10:]:
            print(f"  - epoch {row['epoch']}: {row['dev_loss']:.4f}")
    return summary


if __name__ == "__main__":
    print("🔍 Checking Training Run Status\n")
    print("=" * 40)
    check_run_status(sys.argv[1] if len(sys.argv) > 1 else "runs/default")
    print("=" * 40)
