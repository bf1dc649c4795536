"""File formats: tag streams, run manifests and versioned JSON documents."""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import __version__
from .config import FORMAT_VERSION
from .photon_sim import TimeTagStream


class FormatError(ValueError):
    """A file does not match the expected versioned schema."""


TAG_HEADER = "detector_id,time_ps"


def tag_file_name(network_id: str, channel: int) -> str:
    return f"tags_{network_id}_CH{channel}.csv"


def tag_header(detector_id: str, duration_ps: int, seed, config_hash: str) -> str:
    return (
        f"# format_version={FORMAT_VERSION},detector_id={detector_id},"
        f"duration_ps={duration_ps},seed={seed},config_hash={config_hash}\n{TAG_HEADER}\n"
    )


def append_tags(fh, detector_id: str, tags: np.ndarray) -> None:
    if tags.size:
        prefix = f"{detector_id},"
        fh.write(prefix + f"\n{prefix}".join(map(str, tags.tolist())) + "\n")


def write_tags(path, stream: TimeTagStream, seed, config_hash: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(tag_header(stream.detector_id, stream.duration_ps, seed, config_hash))
        append_tags(fh, stream.detector_id, stream.tags)


def read_tags(path) -> TimeTagStream:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise FormatError(f"{path}: missing metadata header")
        meta = dict(kv.split("=", 1) for kv in first[2:].strip().split(","))
        if int(meta.get("format_version", -1)) != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format_version {meta.get('format_version')}")
        if fh.readline().strip() != TAG_HEADER:
            raise FormatError(f"{path}: expected column header {TAG_HEADER!r}")
        body = fh.read()
    detector_id = meta["detector_id"]
    body = body.replace(f"{detector_id},", "")
    if "," in body:
        raise FormatError(f"{path}: rows for a detector other than {detector_id}")
    times = np.fromstring(body, dtype=np.int64, sep="\n") if body.strip() else np.empty(0, np.int64)
    return TimeTagStream(detector_id, times, int(meta["duration_ps"]))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def dump_json(path, doc: Mapping) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"format_version": FORMAT_VERSION, **doc}, fh, indent=2, sort_keys=False)
        fh.write("\n")


def load_json(path, kind: str | None = None) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    if kind is not None and doc.get("kind") != kind:
        raise FormatError(f"{path}: expected a {kind!r} document, found {doc.get('kind')!r}")
    return doc


MANIFEST = "manifest.json"


def write_manifest(out_dir, files: Iterable[str], config_hash: str, seed) -> Path:
    """Write the manifest last; its presence marks a complete run."""
    out_dir = Path(out_dir)
    entries = [{"path": f, "sha256": sha256_file(out_dir / f)} for f in sorted(files)]
    path = out_dir / MANIFEST
    tmp = out_dir / (MANIFEST + ".tmp")
    dump_json(
        tmp,
        {
            "kind": "manifest",
            "config_hash": config_hash,
            "seed": seed,
            "tool_version": __version__,
            "files": entries,
        },
    )
    os.replace(tmp, path)
    return path


def read_manifest(out_dir) -> dict:
    return load_json(Path(out_dir) / MANIFEST, "manifest")
