"""Minimal TOML-subset reader for the config files used by this package.

Supports tables, arrays of tables, and ``key = value`` pairs whose values
are strings, booleans, integers, floats, or flat arrays of those scalars.
That is the full grammar our config schemas use; py3.10 has no ``tomllib``
so we keep this narrow reader rather than pulling in a parser dependency.
"""

from __future__ import annotations


class TomlError(ValueError):
    """Raised on text that does not conform to the supported subset."""


def _strip_comment(line: str) -> str:
    in_string = False
    for i, ch in enumerate(line):
        if ch == '"':
            in_string = not in_string
        elif ch == "#" and not in_string:
            return line[:i]
    return line


def _parse_scalar(token: str, lineno: int):
    token = token.strip()
    if not token:
        raise TomlError(f"line {lineno}: empty value")
    if token.startswith('"'):
        if len(token) < 2 or not token.endswith('"') or '"' in token[1:-1]:
            raise TomlError(f"line {lineno}: malformed string {token!r}")
        return token[1:-1]
    if token == "true":
        return True
    if token == "false":
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        raise TomlError(f"line {lineno}: cannot parse value {token!r}") from None


def _parse_value(text: str, lineno: int):
    text = text.strip()
    if text.startswith("["):
        if not text.endswith("]"):
            raise TomlError(f"line {lineno}: unterminated array")
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_scalar(tok, lineno) for tok in inner.split(",")]
    return _parse_scalar(text, lineno)


def _descend(root: dict, path: list[str], lineno: int) -> dict:
    node = root
    for part in path:
        nxt = node.setdefault(part, {})
        if isinstance(nxt, list):
            nxt = nxt[-1]
        if not isinstance(nxt, dict):
            raise TomlError(f"line {lineno}: {'.'.join(path)!r} is not a table")
        node = nxt
    return node


def parse(text: str) -> dict:
    """Parses config text into nested dicts/lists of plain Python values."""
    root: dict = {}
    current = root
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("[["):
            if not line.endswith("]]"):
                raise TomlError(f"line {lineno}: malformed table header {line!r}")
            path = [p.strip() for p in line[2:-2].strip().split(".")]
            parent = _descend(root, path[:-1], lineno)
            tables = parent.setdefault(path[-1], [])
            if not isinstance(tables, list):
                raise TomlError(f"line {lineno}: {path[-1]!r} is not an array of tables")
            tables.append({})
            current = tables[-1]
        elif line.startswith("["):
            if not line.endswith("]"):
                raise TomlError(f"line {lineno}: malformed table header {line!r}")
            path = [p.strip() for p in line[1:-1].strip().split(".")]
            current = _descend(root, path, lineno)
        else:
            if "=" not in line:
                raise TomlError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise TomlError(f"line {lineno}: empty key")
            current[key] = _parse_value(value, lineno)
    return root
