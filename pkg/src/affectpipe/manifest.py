"""JSON-lines corpus manifests and filename-driven labeling.

Each manifest line is {"path": ..., "emotion": ..., "text": ..., "split": ...}
with everything but the path optional. Corpus layouts differ per dataset,
so labeling rules are config data: a label map names the filename field
that carries the emotion code and the code-to-label table.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import DataError, FormatError, IoError
from .labels import normalize_label

SPLITS = ("train", "val", "test")


def parse_manifest(path) -> list[dict]:
    """Read and validate manifest lines; emotions are normalized."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: bad JSON: {exc}") from None
        if "path" not in record:
            raise FormatError(f"{path}:{lineno}: missing 'path'")
        if record.get("emotion") is not None:
            record["emotion"] = normalize_label(record["emotion"])
        if record.get("split") is not None and record["split"] not in SPLITS:
            raise FormatError(f"{path}:{lineno}: split must be one of {SPLITS}")
        entries.append(record)
    return entries


def write_manifest(entries: list[dict], path) -> None:
    lines = [json.dumps(e, sort_keys=True) for e in entries]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_label_map(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: bad JSON: {exc}") from None
    if "labels" not in raw or not isinstance(raw["labels"], dict):
        raise FormatError(f"{path}: label map needs a 'labels' table")
    raw.setdefault("separator", "-")
    raw.setdefault("field", 0)
    return raw


def label_for_filename(name: str, label_map: dict) -> str | None:
    """Apply the configured field rule; None when no rule matches."""
    stem = Path(name).stem
    fields = stem.split(label_map["separator"])
    idx = label_map["field"]
    if idx >= len(fields):
        return None
    code = fields[idx]
    label = label_map["labels"].get(code)
    if label is None:
        return None
    return normalize_label(label)


def build_manifest(root_dir, label_map: dict) -> tuple[list[dict], list[str]]:
    """Walk a corpus tree, labeling WAVs by filename; returns (entries, skipped).

    Files matching no mapping rule land in the skipped list instead of being
    silently dropped.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise IoError(f"{root_dir} is not a readable directory")
    entries: list[dict] = []
    skipped: list[str] = []
    for wav in sorted(root.rglob("*.wav")):
        label = label_for_filename(wav.name, label_map)
        if label is None:
            skipped.append(str(wav))
        else:
            entries.append({"path": str(wav), "emotion": label})
    return entries, skipped


def split_entries(entries: list[dict], which: str) -> list[dict]:
    """Entries tagged with the given split (untagged entries count as train)."""
    if which not in SPLITS:
        raise DataError(f"unknown split {which!r}")
    return [e for e in entries if e.get("split", "train") == which]
