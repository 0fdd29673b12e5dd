"""Versioned JSON model files.

The document is laid out with one tree record per line so that parse
errors can be traced back to the tree they occur in::

    {
    "version": 1,
    "num_features": 2,
    "base_offset": 0.5,
    "trees": [
    {"nodes": [{"feature": 0, "threshold": 0.5, "left": 1, "right": 2}, {"value": 1.0}, {"value": 2.0}]},
    {"nodes": [{"value": 0.0}]}
    ]
    }

Floats are written with ``repr`` and therefore round-trip exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

from .ensemble import Tree, TreeEnsemble

FORMAT_VERSION = 1
_HEADER_LINES = 5  # "{", version, num_features, base_offset, "trees": [


class ModelFormatError(ValueError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


def dumps(ensemble: TreeEnsemble) -> str:
    lines = [
        "{",
        f'"version": {FORMAT_VERSION},',
        f'"num_features": {ensemble.num_features},',
        f'"base_offset": {json.dumps(float(ensemble.base_offset))},',
        '"trees": [',
    ]
    records = [json.dumps({"nodes": tree.to_nodes()}) for tree in ensemble.trees]
    lines.extend(r + ("," if i < len(records) - 1 else "") for i, r in enumerate(records))
    lines += ["]", "}"]
    return "\n".join(lines) + "\n"


def save_model(ensemble: TreeEnsemble, path) -> None:
    Path(path).write_text(dumps(ensemble))


def _record_name(lineno: int) -> str:
    k = lineno - _HEADER_LINES - 1
    if k < 0:
        return "header"
    return f"tree record {k}"


def loads(text: str, source: str = "<model>") -> TreeEnsemble:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(
            f"{source}: malformed model file at line {exc.lineno}, column {exc.colno} "
            f"({_record_name(exc.lineno)}): {exc.msg}"
        ) from None
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{source}: top level must be an object")
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{source}: unsupported model format version {version!r} (expected {FORMAT_VERSION})"
        )
    try:
        num_features = int(doc["num_features"])
        base_offset = float(doc["base_offset"])
        raw_trees = doc["trees"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{source}: header: missing or invalid field {exc}") from None
    trees = []
    for t, rec in enumerate(raw_trees):
        try:
            trees.append(Tree.from_nodes(rec["nodes"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"{source}: tree record {t}: {exc}") from None
    try:
        return TreeEnsemble(tuple(trees), base_offset, num_features)
    except ValueError as exc:
        raise ModelFormatError(f"{source}: {exc}") from None


def load_model(path) -> TreeEnsemble:
    return loads(Path(path).read_text(), source=str(path))
