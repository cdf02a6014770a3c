"""Pick casadi or numpy operations depending on whether an operand is symbolic."""
from __future__ import annotations

import casadi as cs
import numpy as np

_SYMBOLIC = (cs.SX, cs.MX, cs.DM)


def is_symbolic(*values) -> bool:
    return any(isinstance(v, _SYMBOLIC) for v in values)


def ops(*values):
    return cs if is_symbolic(*values) else np


def fmax(a, b):
    if is_symbolic(a, b):
        return cs.fmax(a, b)
    return np.maximum(a, b)


def column(values) -> cs.DM:
    """Numeric data as a casadi column, for elementwise use next to symbolic columns."""
    return cs.DM(np.asarray(values, dtype=float).reshape(-1, 1))
