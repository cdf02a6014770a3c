"""YAML loading that keeps the source line of every key, for line-anchored config errors."""
from __future__ import annotations

from pathlib import Path
from typing import Any

import yaml

from .exceptions import ConfigurationError

KeyPath = tuple


def load_yaml(path: str | Path) -> tuple[Any, dict[KeyPath, int]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read file: {exc.strerror or exc}", path=path) from exc

    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigurationError(
            f"invalid YAML: {problem}", path=path, line=mark.line + 1 if mark else None
        ) from exc

    lines: dict[KeyPath, int] = {}
    if node is not None:
        _walk(node, (), lines)
    return data, lines


def _walk(node: yaml.Node, prefix: KeyPath, lines: dict[KeyPath, int]) -> None:
    lines.setdefault(prefix, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = prefix + (key_node.value,)
            lines[key] = key_node.start_mark.line + 1
            _walk(value_node, key, lines)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _walk(item, prefix + (i,), lines)


def line_for(lines: dict[KeyPath, int], keypath: KeyPath) -> int | None:
    """Line of `keypath`, or of its closest known parent."""
    keypath = tuple(keypath)
    while keypath:
        if keypath in lines:
            return lines[keypath]
        keypath = keypath[:-1]
    return lines.get(())
