"""Round-trip safe number formatting shared by every writer."""

from typing import Iterable

import numpy as np


def fmt(value) -> str:
    """17 significant digits; float(fmt(x)) == x."""
    return format(float(value), ".17g")


def fmt_row(values: Iterable) -> str:
    return ",".join(fmt(v) for v in values)


def jsonable(value):
    """Plain Python floats/lists for numpy scalars and arrays."""
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: jsonable(v) for k, v in value.items()}
    return value
