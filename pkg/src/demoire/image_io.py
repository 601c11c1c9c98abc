"""Image file handling: 8-bit PNG via Pillow, PPM/PGM parsed directly.

Pixels live in [0, 1] floats internally; files store 8-bit values. Reading
divides by 255, writing quantizes round-half-up.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, ShapeError


def _check_hwc(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ShapeError(f"expected (h, w) or (h, w, 1|3) image, got shape {img.shape}")
    return img


def quantize(img: np.ndarray) -> np.ndarray:
    """[0,1] floats to uint8, round half up, clipped."""
    return np.clip(np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5), 0, 255).astype(
        np.uint8
    )


def _read_ppm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 2 or raw[:1] != b"P" or raw[1:2] not in b"2356":
        raise DataError(f"{path}: not a PPM/PGM file")
    magic = raw[:2].decode("ascii")

    # header tokens separated by whitespace, '#' comments run to end of line
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace() and raw[pos : pos + 1] != b"#":
            pos += 1
        if pos == start:
            raise DataError(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise DataError(f"{path}: malformed header") from None
    if width <= 0 or height <= 0:
        raise DataError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval}, need 255")

    channels = 3 if magic in ("P3", "P6") else 1
    count = width * height * channels
    if magic in ("P6", "P5"):
        pos += 1  # single whitespace byte after maxval
        data = np.frombuffer(raw, dtype=np.uint8, count=min(count, len(raw) - pos), offset=pos)
        if data.size != count:
            raise DataError(f"{path}: truncated pixel data ({data.size} of {count} bytes)")
    else:
        body = raw[pos:].split(b"#")[0] if b"#" in raw[pos:] else raw[pos:]
        try:
            values = [int(t) for t in body.split()]
        except ValueError:
            raise DataError(f"{path}: non-numeric pixel data") from None
        if len(values) < count:
            raise DataError(f"{path}: truncated pixel data ({len(values)} of {count} values)")
        data = np.asarray(values[:count], dtype=np.uint8)
        if any(v < 0 or v > 255 for v in values[:count]):
            raise DataError(f"{path}: pixel value out of range")
    return data.reshape(height, width, channels).astype(np.float64) / 255.0


def read_image(path) -> np.ndarray:
    """Load a PNG or PPM/PGM as float64 (h, w, c) in [0, 1], c in {1, 3}."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image file not found: {path}")
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pgm"):
        return _read_ppm(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("1", "L", "I", "I;16"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)[:, :, None]
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"{path}: cannot decode image ({exc})") from None
    return arr / 255.0


def write_image(path, img: np.ndarray) -> None:
    """Write (h, w, c) floats to path; format chosen by extension (.png/.ppm)."""
    path = Path(path)
    img = _check_hwc(img)
    data = quantize(img)
    suffix = path.suffix.lower()
    if suffix == ".png":
        if data.shape[2] == 1:
            Image.fromarray(data[:, :, 0], mode="L").save(path)
        else:
            Image.fromarray(data, mode="RGB").save(path)
    elif suffix == ".ppm":
        if data.shape[2] == 1:
            data = np.repeat(data, 3, axis=2)
        header = f"P6\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
        path.write_bytes(header + data.tobytes())
    else:
        raise ConfigError(f"unsupported image extension {path.suffix!r} (use .png or .ppm)")


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Channel mean, keeping the trailing axis: (h, w, c) -> (h, w, 1)."""
    img = _check_hwc(img)
    return img.mean(axis=2, keepdims=True)
