"""Scene directories: synthetic generation with a manifest, loading and the train/test split."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import LFFormatError, load_lf, save_lf
from .lightfield import SceneSpec, gen_synthetic

MANIFEST = "manifest.json"


@dataclass
class Dataset:
    names: list[str]
    scenes: np.ndarray
    train: list[int]
    test: list[int]
    files: list[Path]

    def subset(self, which: str) -> tuple[list[str], np.ndarray]:
        idx = {"train": self.train, "test": self.test, "all": list(range(len(self.names)))}[which]
        return [self.names[i] for i in idx], self.scenes[idx]


def git_blob_hash(data: bytes) -> str:
    """Object id git would give ``data`` as a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def content_hash(paths, extra: bytes = b"") -> str:
    """Hash over ``name blob-id`` lines of the given files plus ``extra``."""
    lines = sorted(f"{Path(p).name} {git_blob_hash(Path(p).read_bytes())}" for p in paths)
    body = "\n".join(lines).encode() + b"\n" + extra
    return git_blob_hash(body)


def generate(out, scenes: int = 50, m: int = 3, n: int = 3, h: int = 64, w: int = 64,
             max_disparity: int = 2, seed: int = 0, test_scenes: int = 10, layers: int = 3) -> dict:
    """Write ``scenes`` synthetic ``.lf4`` files and a manifest that regenerates them exactly."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for k in range(scenes):
        spec = SceneSpec(seed=seed * 100003 + k, m=m, n=n, h=h, w=w, max_disparity=max_disparity, layers=layers)
        lf, disp = gen_synthetic(spec)
        name = f"scene_{k:03d}"
        save_lf(lf, out / f"{name}.lf4")
        entries.append({"name": name, "file": f"{name}.lf4", "seed": spec.seed, "disparities": disp})
    manifest = {
        "generator": "layered",
        "params": {"scenes": scenes, "m": m, "n": n, "h": h, "w": w, "max_disparity": max_disparity,
                   "seed": seed, "layers": layers, "test_scenes": test_scenes},
        "scenes": entries,
        "split": _split([e["name"] for e in entries], test_scenes),
    }
    manifest["content_hash"] = content_hash(out / e["file"] for e in entries)
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def regenerate(manifest_path, out) -> dict:
    manifest = json.loads(Path(manifest_path).read_text())
    return generate(out, **manifest["params"])


def _split(names: list[str], test_scenes: int) -> dict:
    test_scenes = min(max(test_scenes, 0), max(len(names) - 1, 0))
    cut = len(names) - test_scenes
    return {"train": names[:cut], "test": names[cut:]}


def _scene_paths(root: Path) -> list[Path]:
    found = [p for p in root.iterdir() if p.suffix == ".lf4" or (p.is_dir() and any(p.glob("view_*_*.*")))]
    return sorted(found)


def load_dataset(path, test_scenes: int = 10) -> Dataset:
    """Load every scene under ``path`` (a directory) or a single light-field file.

    The split comes from the manifest when present, otherwise the last
    ``test_scenes`` scenes in name order are held out.
    """
    root = Path(path)
    if not root.exists():
        raise FileNotFoundError(f"data path {root} does not exist")
    if not root.is_dir() or any(root.glob("view_*_*.*")):
        files = [root]
    else:
        files = _scene_paths(root)
    if not files:
        raise LFFormatError(f"{root}: no scenes found")
    names = [p.stem for p in files]
    arrays = [load_lf(p).data for p in files]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise LFFormatError(f"{root}: scenes have differing shapes {sorted(shapes)}")
    manifest = root / MANIFEST if root.is_dir() else None
    if manifest is not None and manifest.exists():
        split = json.loads(manifest.read_text()).get("split") or _split(names, test_scenes)
    else:
        split = _split(names, test_scenes)
    index = {nm: i for i, nm in enumerate(names)}
    train = [index[nm] for nm in split["train"] if nm in index]
    test = [index[nm] for nm in split["test"] if nm in index]
    return Dataset(names, np.stack(arrays), train, test, files)
