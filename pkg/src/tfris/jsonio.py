"""JSON helpers shared by all file formats.

Complex numbers are stored as explicit [re, im] pairs; floats rely on
Python's shortest round-trip representation, so save/load cycles are
lossless. Schema problems surface as SchemaError carrying a JSON-pointer
path to the offending node.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import SchemaError


def encode_complex_array(arr: np.ndarray):
    """Nested lists with every complex entry as an [re, im] pair."""
    arr = np.asarray(arr)
    if arr.ndim == 0:
        z = complex(arr)
        return [z.real, z.imag]
    return [encode_complex_array(sub) for sub in arr]


def encode_real_array(arr: np.ndarray):
    return np.asarray(arr, dtype=float).tolist()


def decode_complex_array(node, pointer: str, shape: tuple[int, ...]) -> np.ndarray:
    """Parse nested [re, im] pairs into a complex array of the given shape."""
    out = np.empty(shape, dtype=complex)

    def walk(sub, idx, ptr):
        if len(idx) == len(shape):
            ok = (
                isinstance(sub, list)
                and len(sub) == 2
                and all(isinstance(x, (int, float)) and not isinstance(x, bool)
                        for x in sub)
            )
            if not ok:
                raise SchemaError("expected [re, im] number pair", ptr)
            out[idx] = complex(sub[0], sub[1])
            return
        if not isinstance(sub, list) or len(sub) != shape[len(idx)]:
            raise SchemaError(
                f"expected array of length {shape[len(idx)]}", ptr
            )
        for i, item in enumerate(sub):
            walk(item, idx + (i,), f"{ptr}/{i}")

    walk(node, (), pointer)
    return out


def decode_real_array(node, pointer: str, shape: tuple[int, ...]) -> np.ndarray:
    out = np.empty(shape, dtype=float)

    def walk(sub, idx, ptr):
        if len(idx) == len(shape):
            if isinstance(sub, bool) or not isinstance(sub, (int, float)):
                raise SchemaError("expected a number", ptr)
            out[idx] = float(sub)
            return
        if not isinstance(sub, list) or len(sub) != shape[len(idx)]:
            raise SchemaError(
                f"expected array of length {shape[len(idx)]}", ptr
            )
        for i, item in enumerate(sub):
            walk(item, idx + (i,), f"{ptr}/{i}")

    walk(node, (), pointer)
    return out


def expect_object(node, pointer: str) -> dict:
    if not isinstance(node, dict):
        raise SchemaError("expected a JSON object", pointer)
    return node


def expect_list(node, pointer: str, length: int | None = None) -> list:
    if not isinstance(node, list):
        raise SchemaError("expected a JSON array", pointer)
    if length is not None and len(node) != length:
        raise SchemaError(f"expected array of length {length}", pointer)
    return node


def expect_key(obj: dict, key: str, pointer: str):
    if key not in obj:
        raise SchemaError(f"missing required key '{key}'", pointer)
    return obj[key]


def expect_number(node, pointer: str) -> float:
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise SchemaError("expected a number", pointer)
    return float(node)


def expect_int(node, pointer: str) -> int:
    if isinstance(node, bool) or not isinstance(node, int):
        raise SchemaError("expected an integer", pointer)
    return node


def expect_bool(node, pointer: str) -> bool:
    if not isinstance(node, bool):
        raise SchemaError("expected a boolean", pointer)
    return node


def expect_str(node, pointer: str) -> str:
    if not isinstance(node, str):
        raise SchemaError("expected a string", pointer)
    return node


def dump_json(payload, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}", "") from exc


def grid_to_node(grid) -> dict:
    return {"f0": grid.f0, "fm": grid.fm, "harmonics": list(grid.harmonics)}


def grid_from_node(node, pointer: str):
    # local import keeps this module free of a hard grid dependency at load
    from .errors import ValidationError
    from .grid import HarmonicGrid

    obj = expect_object(node, pointer)
    f0 = expect_number(expect_key(obj, "f0", pointer), f"{pointer}/f0")
    fm = expect_number(expect_key(obj, "fm", pointer), f"{pointer}/fm")
    hs = expect_list(expect_key(obj, "harmonics", pointer), f"{pointer}/harmonics")
    harmonics = tuple(
        expect_int(h, f"{pointer}/harmonics/{i}") for i, h in enumerate(hs)
    )
    try:
        return HarmonicGrid(f0, fm, harmonics)
    except ValidationError as exc:
        raise SchemaError(str(exc), pointer) from exc
