"""JSON checkpoint container for adapters (and NF4-quantized tensors).

Layout (UTF-8, keys sorted)::

    {"schema": 1, "kind": "hoft"|"shoft"|"lora"|"oft", "m": int, "n": int,
     "rank": int, "mode": "exact"|"neumann2", "clamp_eps": float,
     "tensors": {name: {"shape": [...], "data_b64": "..."}}}

Dense tensors are base64 of little-endian float64, row-major. An NF4 tensor
entry carries ``"codec": "nf4"`` with codes packed two per byte (low nibble
first) and float32 little-endian scale arrays.
"""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from .adapters import Adapter, HoftAdapter, LoraAdapter, OftCayleyAdapter, ShoftAdapter
from .cwy import DEFAULT_CLAMP_EPS, Mode
from .quant import Nf4Tensor, ScaleCodes

__all__ = ["SCHEMA_VERSION", "CheckpointError", "save_checkpoint", "load_checkpoint",
           "read_checkpoint", "encode_nf4", "decode_nf4"]

SCHEMA_VERSION = 1
_TOP_KEYS = {"schema", "kind", "m", "n", "rank", "mode", "clamp_eps", "tensors"}
_TENSOR_NAMES = {
    "hoft": {"u", "v"},
    "shoft": {"u", "v", "magnitude"},
    "lora": {"a", "b", "scaling"},
    "oft": {"blocks"},
}


class CheckpointError(ValueError):
    pass


def _b64(raw: bytes) -> str:
    return base64.b64encode(raw).decode("ascii")


def _unb64(text: str) -> bytes:
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except (ValueError, UnicodeEncodeError) as exc:
        raise CheckpointError(f"bad base64 payload: {exc}") from None


def _encode_dense(a) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data_b64": _b64(a.tobytes())}


def _decode_dense(name: str, entry: dict) -> np.ndarray:
    if set(entry) != {"shape", "data_b64"}:
        raise CheckpointError(f"tensor {name!r} has keys {sorted(entry)}")
    shape = tuple(int(s) for s in entry["shape"])
    raw = _unb64(entry["data_b64"])
    if len(raw) != 8 * int(np.prod(shape, dtype=np.int64)):
        raise CheckpointError(f"tensor {name!r}: {len(raw)} bytes do not match shape {shape}")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def encode_nf4(q: Nf4Tensor) -> dict:
    codes = np.asarray(q.codes, dtype=np.uint8)
    if codes.size % 2:
        codes = np.concatenate([codes, np.zeros(1, np.uint8)])
    packed = (codes[0::2] | (codes[1::2] << 4)).astype(np.uint8)
    entry = {
        "codec": "nf4",
        "shape": [q.rows, q.cols],
        "block_size": q.block_size,
        "codes_b64": _b64(packed.tobytes()),
        "absmax_b64": _b64(np.asarray(q.absmax, dtype="<f4").tobytes()),
    }
    if q.second_scales is not None:
        s = q.second_scales
        entry["double_quant"] = {
            "group_size": s.group_size,
            "codes_b64": _b64(np.asarray(s.codes, np.uint8).tobytes()),
            "offsets_b64": _b64(np.asarray(s.offsets, dtype="<f4").tobytes()),
            "steps_b64": _b64(np.asarray(s.steps, dtype="<f4").tobytes()),
        }
    return entry


def decode_nf4(entry: dict) -> Nf4Tensor:
    allowed = {"codec", "shape", "block_size", "codes_b64", "absmax_b64", "double_quant"}
    if entry.get("codec") != "nf4" or not set(entry) <= allowed:
        raise CheckpointError(f"malformed nf4 entry with keys {sorted(entry)}")
    try:
        rows, cols = (int(s) for s in entry["shape"])
        block_size = int(entry["block_size"])
        packed = np.frombuffer(_unb64(entry["codes_b64"]), dtype=np.uint8)
        absmax = np.frombuffer(_unb64(entry["absmax_b64"]), dtype="<f4").astype(np.float32)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed nf4 entry: {exc}") from None
    codes = np.empty(packed.size * 2, dtype=np.uint8)
    codes[0::2] = packed & 0x0F
    codes[1::2] = packed >> 4
    size = rows * cols
    if codes.size not in (size, size + 1):
        raise CheckpointError("nf4 code count does not match shape")
    codes = codes[:size]
    if absmax.size != -(-size // block_size):
        raise CheckpointError("nf4 scale count does not match shape and block size")
    second = None
    if "double_quant" in entry:
        dq = entry["double_quant"]
        second = ScaleCodes(
            np.frombuffer(_unb64(dq["codes_b64"]), dtype=np.uint8).copy(),
            np.frombuffer(_unb64(dq["offsets_b64"]), dtype="<f4").astype(np.float32),
            np.frombuffer(_unb64(dq["steps_b64"]), dtype="<f4").astype(np.float32),
            int(dq["group_size"]),
        )
    return Nf4Tensor(rows, cols, block_size, codes, absmax, second)


def _adapter_tensors(adapter: Adapter) -> dict[str, np.ndarray]:
    if isinstance(adapter, ShoftAdapter):
        return {"u": adapter.u, "v": adapter.v, "magnitude": adapter.magnitude}
    if isinstance(adapter, HoftAdapter):
        return {"u": adapter.u, "v": adapter.v}
    if isinstance(adapter, LoraAdapter):
        return {"a": adapter.a, "b": adapter.b, "scaling": np.array([adapter.scaling])}
    if isinstance(adapter, OftCayleyAdapter):
        return {"blocks": adapter.blocks}
    raise TypeError(f"unknown adapter type {type(adapter).__name__}")


def save_checkpoint(adapter: Adapter, path, extra: dict | None = None) -> None:
    """Write ``adapter`` (plus optional named dense or NF4 tensors) to ``path``."""
    tensors = {name: _encode_dense(a) for name, a in _adapter_tensors(adapter).items()}
    for name, value in (extra or {}).items():
        if name in tensors:
            raise CheckpointError(f"extra tensor {name!r} clashes with an adapter tensor")
        tensors[name] = encode_nf4(value) if isinstance(value, Nf4Tensor) else _encode_dense(value)
    doc = {
        "schema": SCHEMA_VERSION,
        "kind": adapter.kind,
        "m": adapter.m,
        "n": adapter.n,
        "rank": adapter.rank,
        "mode": Mode(adapter.mode).value,
        "clamp_eps": float(getattr(adapter, "clamp_eps", DEFAULT_CLAMP_EPS)),
        "tensors": tensors,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _build_adapter(doc: dict, dense: dict[str, np.ndarray]) -> Adapter:
    kind, m, n, rank = doc["kind"], doc["m"], doc["n"], doc["rank"]
    mode, eps = Mode(doc["mode"]), float(doc["clamp_eps"])

    def expect(name, shape):
        if dense[name].shape != shape:
            raise CheckpointError(f"tensor {name!r} has shape {dense[name].shape}, "
                                  f"expected {shape}")
        return dense[name].copy()

    if kind in ("hoft", "shoft"):
        hoft = HoftAdapter(expect("u", (m, rank)), expect("v", (n, rank)), mode, eps)
        if kind == "hoft":
            return hoft
        return ShoftAdapter(hoft, expect("magnitude", (m,)))
    if kind == "lora":
        return LoraAdapter(expect("a", (m, rank)), expect("b", (rank, n)),
                           float(expect("scaling", (1,))[0]))
    if rank < 1 or m % rank:
        raise CheckpointError(f"oft block size {rank} does not divide m = {m}")
    return OftCayleyAdapter(expect("blocks", (m // rank, rank, rank)), n)


def read_checkpoint(path) -> tuple[Adapter, dict]:
    """Load an adapter and any extra tensors stored alongside it."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise CheckpointError(f"{path}: top level must be an object")
    if "schema" not in doc:
        raise CheckpointError(f"{path}: missing schema field")
    if doc["schema"] != SCHEMA_VERSION:
        raise CheckpointError(f"{path}: schema {doc['schema']!r}, expected {SCHEMA_VERSION}")
    if set(doc) != _TOP_KEYS:
        unknown = sorted(set(doc) - _TOP_KEYS)
        missing = sorted(_TOP_KEYS - set(doc))
        raise CheckpointError(f"{path}: unknown keys {unknown}, missing keys {missing}")
    kind = doc["kind"]
    if kind not in _TENSOR_NAMES:
        raise CheckpointError(f"{path}: unknown adapter kind {kind!r}")
    try:
        Mode(doc["mode"])
    except ValueError:
        raise CheckpointError(f"{path}: unknown mode {doc['mode']!r}") from None
    for key in ("m", "n", "rank"):
        if not isinstance(doc[key], int) or doc[key] < 1:
            raise CheckpointError(f"{path}: {key} must be a positive integer")
    tensors = doc["tensors"]
    if not isinstance(tensors, dict):
        raise CheckpointError(f"{path}: tensors must be an object")
    missing = _TENSOR_NAMES[kind] - set(tensors)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    dense, extra = {}, {}
    for name, entry in tensors.items():
        if not isinstance(entry, dict):
            raise CheckpointError(f"{path}: tensor {name!r} must be an object")
        if entry.get("codec") == "nf4":
            extra[name] = decode_nf4(entry)
        elif name in _TENSOR_NAMES[kind]:
            dense[name] = _decode_dense(name, entry)
        else:
            extra[name] = _decode_dense(name, entry)
    return _build_adapter(doc, dense), extra


def load_checkpoint(path) -> Adapter:
    return read_checkpoint(path)[0]
