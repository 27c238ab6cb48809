"""
Building a balanced dataset container
=====================================

The forge merges a controlled-environment source with a field-condition
source, drawing evenly per class toward a per-class target, then splits
80/20 and writes one HDF5 container with images, labels, boxes, and
metadata. Everything is seeded and recorded in a JSON manifest.

This demo fabricates two tiny source trees, builds a container, and plots
the class distribution.
"""

import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from capsyolo.dataset import (
    balance_merge, read_container, scan_sources, split, validate_balance, write_container,
)

workdir = Path(tempfile.mkdtemp(prefix="capsyolo_demo_"))
rng = np.random.default_rng(1)

# Fabricate two labeled trees: <root>/<class>/<image>.png
counts = {
    "lab": {"Early_Blight": 12, "Leaf_Mold": 8, "Healthy": 10},
    "field": {"Early_Blight": 6, "Leaf_Mold": 4},
}
for source, classes in counts.items():
    for label, n in classes.items():
        class_dir = workdir / source / label
        class_dir.mkdir(parents=True, exist_ok=True)
        for i in range(n):
            pixels = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
            Image.fromarray(pixels).save(class_dir / f"{i:03d}.png")

# Scan, balance toward per-class targets, split, write.
sources = scan_sources([workdir / "lab", workdir / "field"])
for corpus in sources:
    print(f"scanned {corpus.name}: {corpus.class_counts()}")

targets = {"Early_Blight": 10, "Leaf_Mold": 8, "Healthy": 6}
manifest = balance_merge(sources, targets, seed=42)
split(manifest, train_fraction=0.8, seed=42)

report = validate_balance(manifest)
print("per-class counts:", report.per_class)
print("per-source counts:", report.per_source)
print("max/min ratio:", report.max_min_ratio)

container_path = workdir / "demo.h5"
write_container(manifest, container_path, image_size=(32, 32))
data = read_container(container_path)
print(f"container: {data.images.shape[0]} images of "
      f"{data.images.shape[1]}x{data.images.shape[2]}, "
      f"{len(data.train_indices)} train / {len(data.test_indices)} test")

# The same chart `capsyolo forge stats --plot` draws.
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

class_counts = np.bincount(data.labels, minlength=len(data.classes))
fig, ax = plt.subplots(figsize=(6, 3))
ax.bar(data.classes, class_counts, color="#3c8031")
ax.set_ylabel("images")
fig.tight_layout()
out = workdir / "distribution.svg"
fig.savefig(out)
print("wrote", out)
