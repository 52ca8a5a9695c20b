"""Binary PPM (P6) and PGM (P5) image I/O, maxval 255.

Arrays cross this boundary as float in [0, 1]: color images [3, H, W],
grayscale [H, W]. PNG is supported opportunistically when Pillow is
installed; the netpbm path has no dependencies.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = ["read_image", "write_image", "read_pnm", "write_pnm"]


def _read_token(f) -> bytes:
    # netpbm tokens are separated by whitespace; '#' starts a comment that
    # runs to end of line and may appear between any two tokens.
    tok = b""
    while True:
        ch = f.read(1)
        if not ch:
            raise ValueError("truncated netpbm header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = f.read(1)
            continue
        if ch.isspace():
            if tok:
                return tok
            continue
        tok += ch


def read_pnm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = _read_token(f)
        if magic not in (b"P5", b"P6"):
            raise ValueError(f"unsupported netpbm magic {magic!r} in {path}")
        w = int(_read_token(f))
        h = int(_read_token(f))
        maxval = int(_read_token(f))
        if maxval != 255:
            raise ValueError(f"only maxval 255 is supported, got {maxval} in {path}")
        channels = 3 if magic == b"P6" else 1
        raw = f.read(w * h * channels)
        if len(raw) != w * h * channels:
            raise ValueError(f"truncated pixel data in {path}")
    data = np.frombuffer(raw, dtype=np.uint8).astype(np.float32) / 255.0
    if channels == 1:
        return data.reshape(h, w)
    return data.reshape(h, w, 3).transpose(2, 0, 1)


def write_pnm(path, img: np.ndarray) -> None:
    if img.ndim == 3 and img.shape[0] == 3:
        h, w = img.shape[1:]
        header = b"P6\n%d %d\n255\n" % (w, h)
        pixels = img.transpose(1, 2, 0)
    elif img.ndim == 2:
        h, w = img.shape
        header = b"P5\n%d %d\n255\n" % (w, h)
        pixels = img
    else:
        raise ValueError(f"expected [3,H,W] or [H,W], got shape {img.shape}")
    quantized = np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(header)
        f.write(quantized.tobytes())


def _to_chw(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        return np.repeat(arr[None], 3, axis=0)
    return arr


def read_image(path, as_color: bool = True) -> np.ndarray:
    """Dispatch on suffix: .ppm/.pgm natively, .png via Pillow if present.
    With as_color, grayscale inputs are replicated to [3, H, W]."""
    suffix = os.path.splitext(str(path))[1].lower()
    if suffix in (".ppm", ".pgm"):
        img = read_pnm(path)
    elif suffix == ".png":
        try:
            from PIL import Image
        except ImportError as e:
            raise ValueError(
                f"reading {path} needs Pillow (pip install ddt[png]); "
                "or convert to .ppm"
            ) from e
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        img = arr.transpose(2, 0, 1)
    else:
        raise ValueError(f"unsupported image suffix {suffix!r} (use .ppm/.pgm/.png)")
    return _to_chw(img) if as_color else img


def write_image(path, img: np.ndarray) -> None:
    suffix = os.path.splitext(str(path))[1].lower()
    if suffix in (".ppm", ".pgm"):
        write_pnm(path, img)
    elif suffix == ".png":
        try:
            from PIL import Image
        except ImportError as e:
            raise ValueError(
                f"writing {path} needs Pillow (pip install ddt[png]); "
                "or write a .ppm"
            ) from e
        arr = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
        if arr.ndim == 3:
            Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)
        else:
            Image.fromarray(arr, mode="L").save(path)
    else:
        raise ValueError(f"unsupported image suffix {suffix!r} (use .ppm/.pgm/.png)")
