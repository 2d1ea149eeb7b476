from typing import Annotated, Any

import numpy as np
from pydantic import BeforeValidator, PlainSerializer


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _as_float_array(value: Any) -> np.ndarray:
    return _frozen(np.array(value, dtype=float))


def _as_bool_array(value: Any) -> np.ndarray:
    return _frozen(np.array(value, dtype=float) != 0.0)


def _to_list(arr: np.ndarray) -> list:
    return arr.tolist()


# Read-only float64 array inside a pydantic model; dumps as nested lists.
FloatArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_float_array),
    PlainSerializer(_to_list, return_type=list),
]

# Read-only boolean mask; accepts 0/1 numbers or booleans.
BoolArray = Annotated[
    np.ndarray,
    BeforeValidator(_as_bool_array),
    PlainSerializer(_to_list, return_type=list),
]
