"""On-disk layout of query directories and prepared class templates.

A query directory holds one subdirectory per class with one feature file
(or WAV) per sample. A prepared directory mirrors it::

    prepared/
      prepared.json            settings and class list
      <label>/manifest.json    L, K, D, frame rate, sample ids
      <label>/sample_<id>.msdt raw samples
      <label>/converted_<id>.msdt
      <label>/standard_mean.msdt
      <label>/altered_mean.msdt
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Mapping

from .barycenter import QueryClass
from .dtw import FeatureSequence
from .features import read_feature_file, write_feature_file

FORMAT = 1
FEATURE_SUFFIX = ".msdt"


def read_query_dir(
    root: str | Path, suffix: str = FEATURE_SUFFIX, loader: Callable[[Path], FeatureSequence] = read_feature_file
) -> dict[str, list[tuple[str, FeatureSequence]]]:
    """Map class name to ``(sample id, sequence)`` pairs in filename order."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"query directory {root} does not exist")
    classes = {}
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(p for p in sub.iterdir() if p.suffix == suffix)
        if not files:
            raise ValueError(f"class directory {sub} has no {suffix} files")
        items = []
        for f in files:
            seq = loader(f)
            if items and seq.dim != items[0][1].dim:
                raise ValueError(f"{f}: dimension {seq.dim} differs from {items[0][1].dim} in {files[0].name}")
            if items and seq.frame_rate != items[0][1].frame_rate:
                raise ValueError(f"{f}: frame rate {seq.frame_rate} differs from {items[0][1].frame_rate}")
            items.append((f.stem, seq))
        classes[sub.name] = items
    if not classes:
        raise ValueError(f"no class subdirectories in {root}")
    return classes


def write_query_dir(root: str | Path, queries: Mapping[str, list[tuple[str, FeatureSequence]]]) -> None:
    root = Path(root)
    for label, items in queries.items():
        d = root / label
        d.mkdir(parents=True, exist_ok=True)
        for name, seq in items:
            write_feature_file(seq, d / f"{name}{FEATURE_SUFFIX}")


def save_prepared(classes: Mapping[str, QueryClass], out_dir: str | Path, settings: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for label, cls in classes.items():
        d = out / label
        d.mkdir(exist_ok=True)
        for sid, s, c in zip(cls.sample_ids, cls.samples, cls.converted):
            write_feature_file(s, d / f"sample_{sid}{FEATURE_SUFFIX}")
            write_feature_file(c, d / f"converted_{sid}{FEATURE_SUFFIX}")
        write_feature_file(cls.standard_mean, d / f"standard_mean{FEATURE_SUFFIX}")
        write_feature_file(cls.altered_mean, d / f"altered_mean{FEATURE_SUFFIX}")
        manifest = {
            "label": label,
            "L": cls.template_length,
            "K": len(cls.samples),
            "D": cls.dim,
            "frame_rate": cls.frame_rate,
            "sample_ids": cls.sample_ids,
            "altered_objective": cls.altered_objective,
            **settings,
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    index = {"format": FORMAT, "classes": sorted(classes), **settings}
    (out / "prepared.json").write_text(json.dumps(index, indent=2) + "\n", encoding="utf-8")


def load_manifest(prepared_dir: str | Path) -> dict:
    path = Path(prepared_dir) / "prepared.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run 'msdtw prepare' first")
    index = json.loads(path.read_text(encoding="utf-8"))
    if index.get("format") != FORMAT:
        raise ValueError(f"{path}: unsupported format {index.get('format')!r}")
    return index


def load_prepared(prepared_dir: str | Path) -> dict[str, QueryClass]:
    root = Path(prepared_dir)
    index = load_manifest(root)
    classes = {}
    for label in index["classes"]:
        d = root / label
        man = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
        ids = man["sample_ids"]

        def need(name):
            p = d / f"{name}{FEATURE_SUFFIX}"
            if not p.exists():
                raise FileNotFoundError(f"class {label!r}: missing template {p.name}")
            return read_feature_file(p)

        cls = QueryClass(label, [need(f"sample_{i}") for i in ids], sample_ids=list(ids))
        cls.standard_mean = need("standard_mean")
        cls.altered_mean = need("altered_mean")
        cls.converted = [need(f"converted_{i}") for i in ids]
        classes[label] = cls
    return classes


def load_prepared_samples(prepared_dir: str | Path) -> dict[str, list[tuple[str, FeatureSequence]]]:
    return {label: list(zip(cls.sample_ids, cls.samples)) for label, cls in load_prepared(prepared_dir).items()}
