"""orjson-backed helpers for reports and line-delimited metrics."""

from typing import IO, Any

import numpy as np
import orjson

JSONDecodeError = orjson.JSONDecodeError

_OPTIONS = orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS


def _default(o):
    if hasattr(o, "to_dict"):
        return o.to_dict()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"Type is not JSON serializable: {type(o).__name__}")


def loads(s: str | bytes) -> Any:
    """Deserialize s (a str or bytes instance containing a JSON document) to a Python object."""
    return orjson.loads(s)


def dumps(obj: Any, *, indent: bool = False) -> str:
    """
    Serialize obj to a JSON formatted str.

    :param obj: the object you want to serialize
    :param indent: pretty print with two spaces when True
    """
    options = _OPTIONS | (orjson.OPT_INDENT_2 if indent else 0)
    return orjson.dumps(obj, default=_default, option=options).decode("utf-8")


def dump_line(obj: Any, fp: IO[bytes]) -> None:
    """Append obj as one JSON line to a binary stream."""
    fp.write(orjson.dumps(obj, default=_default, option=_OPTIONS | orjson.OPT_APPEND_NEWLINE))
