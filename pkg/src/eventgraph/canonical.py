"""Canonical serialization and content hashing.

Every byte that is hashed or written to a log file goes through
:func:`canonicalize`: sorted map keys, no whitespace, UTF-8 strings, and
integral numbers rendered as plain integers regardless of how they were
spelled (``1``, ``1.0`` and ``-0.0`` all become ``1``/``0``).
"""

from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Mapping
from typing import Any

from .errors import NonCanonicalizable

HASH_NAME = "sha256"


def canonicalize(value: Any, *, integers_only: bool = False) -> bytes:
    """Return the canonical byte encoding of a structured value.

    With ``integers_only`` set, non-integral numbers are rejected; this is the
    mode used for anything that feeds a cache key.
    """
    parts: list[str] = []
    _encode(value, parts, integers_only)
    return "".join(parts).encode("utf-8")


def canonical_str(value: Any, *, integers_only: bool = False) -> str:
    return canonicalize(value, integers_only=integers_only).decode("utf-8")


def _encode(value: Any, out: list[str], integers_only: bool) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, int):
        out.append(str(int(value)))
    elif isinstance(value, float):
        out.append(_format_float(value, integers_only))
    elif isinstance(value, Mapping):
        keys = list(value.keys())
        for key in keys:
            if not isinstance(key, str):
                raise NonCanonicalizable(f"map key {key!r} is not a string")
        out.append("{")
        for i, key in enumerate(sorted(keys)):
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _encode(value[key], out, integers_only)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _encode(item, out, integers_only)
        out.append("]")
    else:
        raise NonCanonicalizable(f"cannot canonicalize {type(value).__name__}")


def _format_float(value: float, integers_only: bool) -> str:
    if not math.isfinite(value):
        raise NonCanonicalizable(f"non-finite number {value!r}")
    if value.is_integer():
        return str(int(value))
    if integers_only:
        raise NonCanonicalizable(f"non-integer number {value!r} in hash-relevant value")
    # repr is the shortest round-tripping spelling and is platform independent
    return repr(value)


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_value(value: Any, *, integers_only: bool = False) -> str:
    return digest(canonicalize(value, integers_only=integers_only))


class FrozenDict(dict):
    """A dict that refuses mutation. Compares equal to plain dicts."""

    __slots__ = ()

    def _readonly(self, *args, **kwargs):
        raise TypeError("event payloads and graph properties are immutable")

    __setitem__ = __delitem__ = _readonly
    clear = pop = popitem = setdefault = update = _readonly
    __ior__ = _readonly  # type: ignore[assignment]

    def __reduce__(self):
        return (FrozenDict, (dict(self),))


class FrozenList(list):
    """A list that refuses mutation. Compares equal to plain lists."""

    __slots__ = ()

    def _readonly(self, *args, **kwargs):
        raise TypeError("event payloads and graph properties are immutable")

    __setitem__ = __delitem__ = __iadd__ = __imul__ = _readonly  # type: ignore[assignment]
    append = extend = insert = pop = remove = reverse = sort = clear = _readonly

    def __reduce__(self):
        return (FrozenList, (list(self),))


def freeze(value: Any) -> Any:
    if isinstance(value, FrozenDict | FrozenList):
        return value
    if isinstance(value, Mapping):
        return FrozenDict({k: freeze(v) for k, v in value.items()})
    if isinstance(value, (list, tuple)):
        return FrozenList(freeze(v) for v in value)
    return value


def thaw(value: Any) -> Any:
    """Deep-copy a frozen value into ordinary dicts and lists."""
    if isinstance(value, Mapping):
        return {k: thaw(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [thaw(v) for v in value]
    return value
