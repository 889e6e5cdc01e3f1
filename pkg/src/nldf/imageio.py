"""PPM (P6) and PNG frame files. Values map to bytes as round(255 v) after clipping."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .render import Image


def to_bytes(img: Image) -> np.ndarray:
    return np.round(np.clip(img.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_ppm(img: Image) -> bytes:
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + to_bytes(img).tobytes()


def write_ppm(path, img: Image) -> None:
    Path(path).write_bytes(encode_ppm(img))


def read_ppm(path) -> Image:
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise ValueError(f"{path}: only 8-bit binary PPM (P6) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    raw = np.frombuffer(data[pos + 1:pos + 1 + w * h * 3], dtype=np.uint8)
    return Image(raw.reshape(h, w, 3).astype(np.float64) / 255.0)


def write_png(path, img: Image) -> None:
    PILImage.fromarray(to_bytes(img)).save(path, format="PNG")


def write_frame(path, img: Image) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        write_png(path, img)
    else:
        write_ppm(path, img)


def read_frame(path) -> Image:
    path = Path(path)
    if path.suffix.lower() == ".png":
        return Image(np.asarray(PILImage.open(path).convert("RGB"), dtype=np.float64) / 255.0)
    return read_ppm(path)
