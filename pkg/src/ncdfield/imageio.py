"""Readers/writers for the simple Netpbm-family formats used on disk.

Color images are binary PPM (P6, 8-bit), label maps are 16-bit PGM (P5,
big-endian as Netpbm requires) and float maps are PFM (little-endian, scale -1).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _read_header(buf: bytes, n_fields: int) -> tuple[list[bytes], int]:
    fields: list[bytes] = []
    pos = 0
    while len(fields) < n_fields:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while buf[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not buf[pos:pos + 1].isspace():
            pos += 1
        fields.append(buf[start:pos])
    return fields, pos + 1


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8:
        rgb = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _read_header(buf, 4)
    if magic != b"P6" or int(maxval) != 255:
        raise ValueError(f"{path}: not an 8-bit P6 file")
    data = np.frombuffer(buf, dtype=np.uint8, count=int(w) * int(h) * 3, offset=pos)
    return data.reshape(int(h), int(w), 3)


def write_pgm16(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 65535:
        raise ValueError("labels out of 16-bit range")
    h, w = labels.shape
    payload = labels.astype(">u2").tobytes()
    Path(path).write_bytes(f"P5\n{w} {h}\n65535\n".encode() + payload)


def read_pgm16(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _read_header(buf, 4)
    if magic != b"P5" or int(maxval) != 65535:
        raise ValueError(f"{path}: not a 16-bit P5 file")
    data = np.frombuffer(buf, dtype=">u2", count=int(w) * int(h), offset=pos)
    return data.reshape(int(h), int(w)).astype(np.int64)


def write_pfm(path, image: np.ndarray) -> None:
    """Write a 1- or 3-channel float map; rows stored bottom-to-top per PFM."""
    image = np.asarray(image, dtype="<f4")
    if image.ndim == 2:
        kind, h, w = b"Pf", *image.shape
    elif image.ndim == 3 and image.shape[2] == 3:
        kind, (h, w, _) = b"PF", image.shape
    else:
        raise ValueError(f"PFM holds 1 or 3 channels, got shape {image.shape}")
    header = kind + f"\n{w} {h}\n-1.0\n".encode()
    Path(path).write_bytes(header + np.flipud(image).tobytes())


def read_pfm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (kind, w, h, scale), pos = _read_header(buf, 4)
    w, h, scale = int(w), int(h), float(scale)
    channels = {b"Pf": 1, b"PF": 3}.get(kind)
    if channels is None:
        raise ValueError(f"{path}: not a PFM file")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf, dtype=dtype, count=w * h * channels, offset=pos)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return np.flipud(data.reshape(shape)).astype(np.float32)
