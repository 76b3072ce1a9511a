# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:

"""
Utility functionality.
"""

import json
import os
import tempfile
from typing import Any, Dict, Union

import cattr
import numpy as np
import pendulum
from pendulum import DateTime


class CattrConverter(cattr.Converter):
    """
    Cattr converter that knows how to serialize/deserialize DateTime to an ISO 8601 timestamp
    and NumPy arrays to nested lists of floats.
    """

    def __init__(self) -> None:
        super().__init__()  # type: ignore
        self.register_unstructure_hook(DateTime, lambda datetime: datetime.isoformat() if datetime else None)  # type: ignore
        self.register_structure_hook(DateTime, lambda string, _: pendulum.parse(string) if string else None)
        self.register_unstructure_hook(np.ndarray, lambda array: array.tolist())
        self.register_structure_hook(np.ndarray, lambda data, _: np.asarray(data, dtype=np.float64))


def to_json(converter: cattr.Converter, value: Any) -> str:
    """Serialize an attrs object to JSON, with stable formatting so equal objects give equal text."""
    return json.dumps(converter.unstructure(value), indent="  ", allow_nan=True) + "\n"


def atomic_write(path: str, data: Union[str, bytes]) -> None:
    """
    Write a file atomically, via a temporary file in the same directory and a rename.

    An interrupted write never leaves a truncated file at the target path.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    handle, temp = tempfile.mkstemp(dir=directory, prefix=".%s." % os.path.basename(path), suffix=".tmp")
    try:
        with os.fdopen(handle, mode, **({} if isinstance(data, bytes) else {"encoding": "utf-8", "newline": ""})) as f:
            f.write(data)
        os.replace(temp, path)
    except BaseException:
        if os.path.exists(temp):
            os.remove(temp)
        raise


def read_properties(path: str) -> Dict[str, str]:
    """
    Read a flat key=value file.

    Blank lines and lines starting with '#' are ignored.  Keys and values are stripped.

    Raises:
        ValueError: If a line is not of the form key=value
    """
    result = {}
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError("%s:%d: expected key=value, got %r" % (path, number, line))
            key, value = line.split("=", 1)
            result[key.strip()] = value.strip()
    return result


def format_properties(properties: Dict[str, Any]) -> str:
    """Format a flat dictionary as key=value lines, in the given order."""
    return "".join("%s=%s\n" % (key, value) for key, value in properties.items())
