"""Dataset preparation: seeded random crops plus a JSON manifest.

make_dataset scans a directory of netpbm images, takes one random crop of
a fixed square size from each, splits the crops into train/val, and
writes everything under the output directory together with manifest.json:

    {"seed": ..., "crop": ..., "entries": [{"path": ..., "split": ...}, ...]}

Paths in the manifest are relative to the manifest's own directory.  The
same source directory, seed, and crop size always reproduce the same
files and the same split.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadArgument, CodecError
from .netpbm import read_image, write_image

__all__ = ["DatasetManifest", "make_dataset", "load_manifest", "manifest_images"]


@dataclass
class DatasetManifest:
    seed: int
    crop: int
    entries: list  # (relative path, split) pairs
    root: Path  # directory holding the manifest

    def paths(self, split):
        if split not in ("train", "val"):
            raise BadArgument(f"unknown split {split!r}")
        return [self.root / p for p, s in self.entries if s == split]


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path) as f:
        doc = json.load(f)
    entries = [(e["path"], e["split"]) for e in doc["entries"]]
    for _, split in entries:
        if split not in ("train", "val"):
            raise CodecError(f"manifest has unknown split {split!r}")
    return DatasetManifest(int(doc["seed"]), int(doc["crop"]), entries, path.parent)


def manifest_images(manifest: DatasetManifest, split):
    return [read_image(p) for p in manifest.paths(split)]


def make_dataset(src_dir, out_dir, crop=180, seed=0, val_fraction=0.2) -> Path:
    """Crop every netpbm image under src_dir and write a manifest.

    Sources too small for the crop are rejected rather than skipped, so a
    manifest never silently drops data.  Returns the manifest path.
    """
    if crop < 1:
        raise BadArgument("crop size must be positive")
    if not 0.0 <= val_fraction <= 1.0:
        raise BadArgument("val fraction must be in [0, 1]")
    src_dir = Path(src_dir)
    sources = sorted(p for p in src_dir.iterdir() if p.suffix in (".pgm", ".ppm"))
    if not sources:
        raise BadArgument(f"no netpbm images under {src_dir}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for src in sources:
        img = read_image(src)
        h, w = img.shape[:2]
        if h < crop or w < crop:
            raise BadArgument(f"{src} is smaller than the {crop}x{crop} crop")
        i = int(rng.integers(h - crop + 1))
        j = int(rng.integers(w - crop + 1))
        name = src.stem + ("_crop.pgm" if img.shape[2] == 1 else "_crop.ppm")
        write_image(out_dir / name, img[i : i + crop, j : j + crop])
        entries.append(name)
    order = rng.permutation(len(entries))
    n_val = int(round(val_fraction * len(entries)))
    val_set = set(order[:n_val].tolist())
    doc = {
        "seed": int(seed),
        "crop": int(crop),
        "entries": [
            {"path": name, "split": "val" if k in val_set else "train"}
            for k, name in enumerate(entries)
        ],
    }
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")
    return manifest_path
