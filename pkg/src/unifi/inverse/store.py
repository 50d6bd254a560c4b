"""Versioned binary container for trained models.

Layout (all integers little-endian):

    magic 'UIFM' | u32 version | u32 header_len | header JSON (UTF-8)
    | normalizer 10 x f64 | u64 n_params | params f64[] | sha256 digest

The header JSON carries the model config, the feature mask, and the
parameter layout. The trailing digest covers every preceding byte, so
truncation and corruption are both detected at load time. Parameters round
trip bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..errors import ModelFormatError
from .network import ModelConfig, flatten_params, param_shapes, unflatten_params
from .training import InverseModel, Normalizer

MAGIC = b"UIFM"
VERSION = 1
_DIGEST_LEN = 32


def save_model(model: InverseModel, dest) -> None:
    header = {
        "config": asdict(model.config),
        "feature_mask": [bool(v) for v in model.feature_mask],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    flat = flatten_params(model.params, model.config)
    body = bytearray()
    body += MAGIC
    body += struct.pack("<I", VERSION)
    body += struct.pack("<I", len(header_bytes))
    body += header_bytes
    body += np.concatenate([model.normalizer.mean, model.normalizer.std]).astype("<f8").tobytes()
    body += struct.pack("<Q", flat.shape[0])
    body += flat.astype("<f8").tobytes()
    body += hashlib.sha256(bytes(body)).digest()
    if isinstance(dest, (str, Path)):
        with open(dest, "wb") as fh:
            fh.write(bytes(body))
    else:
        dest.write(bytes(body))


def load_model(source) -> InverseModel:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            raw = fh.read()
    elif isinstance(source, (bytes, bytearray)):
        raw = bytes(source)
    else:
        raw = source.read()

    if len(raw) < len(MAGIC) + 8 + _DIGEST_LEN:
        raise ModelFormatError("model file truncated (shorter than the fixed envelope)")
    if raw[: len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a model file (bad magic bytes)")
    body, digest = raw[:-_DIGEST_LEN], raw[-_DIGEST_LEN:]
    if hashlib.sha256(body).digest() != digest:
        raise ModelFormatError("model file checksum mismatch (corrupt or truncated)")

    off = len(MAGIC)
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != VERSION:
        raise ModelFormatError(f"unsupported model format version {version} (expected {VERSION})")
    (header_len,) = struct.unpack_from("<I", body, off)
    off += 4
    if off + header_len > len(body):
        raise ModelFormatError("model file truncated inside the header")
    try:
        header = json.loads(body[off : off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"model header is not valid JSON ({exc})") from None
    off += header_len
    if not isinstance(header, dict) or set(header) != {"config", "feature_mask"}:
        raise ModelFormatError("model header must carry exactly 'config' and 'feature_mask'")
    try:
        config = ModelConfig(**header["config"])
    except (TypeError, Exception) as exc:  # ConfigError included
        raise ModelFormatError(f"invalid model config in header: {exc}") from None
    mask = header["feature_mask"]
    if not isinstance(mask, list) or len(mask) != 5 or not all(isinstance(v, bool) for v in mask):
        raise ModelFormatError("feature_mask must be a list of 5 booleans")

    norm_bytes = 10 * 8
    if off + norm_bytes + 8 > len(body):
        raise ModelFormatError("model file truncated inside the normalizer")
    norm = np.frombuffer(body, dtype="<f8", count=10, offset=off).copy()
    off += norm_bytes
    (n_params,) = struct.unpack_from("<Q", body, off)
    off += 8
    expected = sum(int(np.prod(s)) for s in param_shapes(config).values())
    if n_params != expected:
        raise ModelFormatError(f"parameter count {n_params} does not match the config ({expected})")
    if off + n_params * 8 != len(body):
        raise ModelFormatError("model file size does not match the declared parameter count")
    flat = np.frombuffer(body, dtype="<f8", count=n_params, offset=off).copy()
    if not np.all(np.isfinite(flat)) or not np.all(np.isfinite(norm)):
        raise ModelFormatError("model file carries non-finite values")
    try:
        normalizer = Normalizer(mean=norm[:5], std=norm[5:])
        return InverseModel(
            params=unflatten_params(flat, config),
            config=config,
            normalizer=normalizer,
            feature_mask=np.array(mask, dtype=bool),
        )
    except Exception as exc:
        raise ModelFormatError(f"model file contents are inconsistent: {exc}") from None
