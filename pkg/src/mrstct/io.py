"""On-disk formats for images, sinograms and MRST models.

Images and sinograms are a JSON header (``.hdr``) plus a raw little-endian
payload (``.raw``) next to it. Models are a single binary file. Byte layouts
are documented in ``docs/formats.md``.
"""
import json
import struct
from pathlib import Path

import numpy as np

from .ctsim import Geometry, SinogramSet
from .imaging import Image
from .mrst import MrstModel

MODEL_MAGIC = b"MRST"
MODEL_VERSION = 1
_MODEL_HEAD = struct.Struct("<4sIII")


class FormatError(ValueError):
    """A file failed to parse; ``field`` names the offending part."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


def _paths(path):
    path = Path(path)
    return path.with_suffix(".hdr"), path.with_suffix(".raw")


def _read_header(hdr, kind):
    try:
        head = json.loads(Path(hdr).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError("header", f"invalid JSON in {hdr}: {exc}") from None
    if head.get("format") != kind:
        raise FormatError("format", f"expected {kind!r}, got {head.get('format')!r}")
    if head.get("version") != 1:
        raise FormatError("version", f"unsupported version {head.get('version')!r}")
    return head


def _read_payload(raw, dtype, count):
    data = Path(raw).read_bytes()
    expected = count * np.dtype(dtype).itemsize
    if len(data) != expected:
        raise FormatError("payload", f"expected {expected} bytes, got {len(data)}")
    return np.frombuffer(data, dtype=dtype)


def save_image(path, img):
    """Write ``img`` as float32; returns the header path."""
    hdr, raw = _paths(path)
    head = {"format": "image", "version": 1, "width": img.width, "height": img.height,
            "pixel_size": img.pixel_size, "units": "modified HU", "dtype": "<f4",
            "order": "row-major", "data_file": raw.name}
    hdr.write_text(json.dumps(head, indent=2) + "\n")
    raw.write_bytes(img.data.astype("<f4").tobytes())
    return hdr


def load_image(path):
    hdr, raw = _paths(path)
    head = _read_header(hdr, "image")
    for key in ("width", "height", "pixel_size"):
        if key not in head:
            raise FormatError(key, "missing from header")
    w, h = int(head["width"]), int(head["height"])
    data = _read_payload(hdr.parent / head.get("data_file", raw.name), "<f4", w * h)
    return Image(data.reshape(h, w).astype(np.float64), float(head["pixel_size"]))


def save_sinogram(path, sino):
    """Write data then weights, each as float64, angle-major."""
    hdr, raw = _paths(path)
    geo = sino.geometry
    head = {"format": "sinogram", "version": 1, "n_angles": geo.n_angles,
            "n_detectors": geo.n_detectors, "detector_spacing": geo.detector_spacing,
            "dtype": "<f8", "layout": "y then weights, angle-major", "data_file": raw.name}
    hdr.write_text(json.dumps(head, indent=2) + "\n")
    raw.write_bytes(np.concatenate([sino.y, sino.weights]).astype("<f8").tobytes())
    return hdr


def load_sinogram(path):
    hdr, raw = _paths(path)
    head = _read_header(hdr, "sinogram")
    for key in ("n_angles", "n_detectors", "detector_spacing"):
        if key not in head:
            raise FormatError(key, "missing from header")
    geo = Geometry(int(head["n_angles"]), int(head["n_detectors"]),
                   float(head["detector_spacing"]))
    data = _read_payload(hdr.parent / head.get("data_file", raw.name), "<f8", 2 * geo.n_rays)
    return SinogramSet(data[:geo.n_rays].copy(), data[geo.n_rays:].copy(), geo)


def model_to_bytes(model):
    parts = [_MODEL_HEAD.pack(MODEL_MAGIC, MODEL_VERSION, model.layers, model.p)]
    parts += [t.astype("<f8").tobytes() for t in model.transforms]
    parts.append(model.thresholds.astype("<f8").tobytes())
    return b"".join(parts)


def model_from_bytes(buf):
    if len(buf) < _MODEL_HEAD.size:
        raise FormatError("header", f"expected {_MODEL_HEAD.size} bytes, got {len(buf)}")
    magic, version, layers, p = _MODEL_HEAD.unpack_from(buf)
    if magic != MODEL_MAGIC:
        raise FormatError("magic", f"expected {MODEL_MAGIC!r}, got {magic!r}")
    if version != MODEL_VERSION:
        raise FormatError("version", f"unsupported version {version}")
    if layers < 1 or p < 1:
        raise FormatError("layers", f"invalid dimensions L={layers}, p={p}")
    expected = _MODEL_HEAD.size + 8 * (layers * p * p + layers)
    if len(buf) != expected:
        raise FormatError("payload", f"expected {expected} bytes, got {len(buf)}")
    body = np.frombuffer(buf, dtype="<f8", offset=_MODEL_HEAD.size)
    mats = body[:layers * p * p].reshape(layers, p, p).astype(np.float64)
    thresholds = body[layers * p * p:].astype(np.float64)
    try:
        return MrstModel(list(mats), thresholds)
    except ValueError as exc:
        raise FormatError("transforms", str(exc)) from None


def save_model(path, model):
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path):
    return model_from_bytes(Path(path).read_bytes())
