"""Portable float map (PFM) and binary PPM readers/writers.

PFM files are written little-endian (scale -1.0) with bottom-up row
order, per the format convention; big-endian files are rejected. PPM is
P6 with maxval 255. Float to 8-bit conversion clamps then rounds half up.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

__all__ = ["read_pfm", "write_pfm", "read_ppm", "write_ppm", "float_to_u8", "u8_to_float"]


def _read_token(f, path):
    """One whitespace-delimited ASCII token, skipping PPM-style comments."""
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            raise DataError(f"{path}: unexpected end of header")
        if c == b"#":
            while c not in (b"\n", b""):
                c = f.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_pfm(path) -> np.ndarray:
    """Load a PFM file as (H, W) float64 for Pf or (H, W, 3) for PF."""
    path = str(path)
    with open(path, "rb") as f:
        magic = _read_token(f, path)
        if magic not in (b"Pf", b"PF"):
            raise DataError(f"{path}: not a PFM file (magic {magic!r})")
        channels = 3 if magic == b"PF" else 1
        try:
            width = int(_read_token(f, path))
            height = int(_read_token(f, path))
            scale = float(_read_token(f, path))
        except ValueError as e:
            raise DataError(f"{path}: malformed PFM header: {e}") from None
        if width < 1 or height < 1:
            raise DataError(f"{path}: bad dimensions {width}x{height}")
        if scale >= 0:
            raise DataError(
                f"{path}: big-endian PFM (scale {scale}) is not supported"
            )
        expected = width * height * channels * 4
        payload = f.read(expected)
        if len(payload) != expected:
            raise DataError(
                f"{path}: truncated PFM payload, expected {expected} bytes, "
                f"got {len(payload)}"
            )
        data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    data = data.reshape(height, width, channels)
    data = data[::-1]  # bottom-up storage
    return data[:, :, 0] if channels == 1 else data


def write_pfm(path, image: np.ndarray):
    """Write an (H, W) or (H, W, 3) float array as little-endian PFM."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        magic, data = b"Pf", image[:, :, None]
    elif image.ndim == 3 and image.shape[2] == 3:
        magic, data = b"PF", image
    else:
        raise DataError(f"unsupported PFM shape {image.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(data[::-1], dtype="<f4").tobytes())


def float_to_u8(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] then round half up to 8-bit."""
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def u8_to_float(image: np.ndarray) -> np.ndarray:
    return image.astype(np.float64) / 255.0


def read_ppm(path) -> np.ndarray:
    """Load a binary P6 PPM as (H, W, 3) float64 in [0, 1]."""
    path = str(path)
    with open(path, "rb") as f:
        magic = _read_token(f, path)
        if magic != b"P6":
            raise DataError(f"{path}: not a binary PPM (magic {magic!r})")
        try:
            width = int(_read_token(f, path))
            height = int(_read_token(f, path))
            maxval = int(_read_token(f, path))
        except ValueError as e:
            raise DataError(f"{path}: malformed PPM header: {e}") from None
        if maxval != 255:
            raise DataError(f"{path}: only maxval 255 supported, got {maxval}")
        expected = width * height * 3
        payload = f.read(expected)
        if len(payload) != expected:
            raise DataError(
                f"{path}: truncated PPM payload, expected {expected} bytes, "
                f"got {len(payload)}"
            )
    return u8_to_float(
        np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    )


def write_ppm(path, image: np.ndarray):
    """Write an (H, W, 3) float image in [0, 1] as binary P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"PPM needs an (H, W, 3) image, got {image.shape}")
    u8 = float_to_u8(image) if image.dtype != np.uint8 else image
    h, w = u8.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(u8).tobytes())
