"""Synthetic moire pair generation.

Simulates photographing a screen: the reference is rendered onto a virtual
display with vertical RGB subpixel stripes, viewed through a mild projective
transform, area-sampled by a sensor grid whose pitch beats against the
stripes, optionally Bayer-mosaiced and re-interpolated, then warped back
into the reference pixel grid. The output is therefore pixel-aligned with
the reference while carrying spatially varying colored interference.

Physical realism is out of scope; the point is multi-frequency contamination
that exercises a multiresolution restorer.
"""

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .datafiles import read_manifest, write_manifest
from .errors import ConfigError, DataError, ShapeError, SynthesisError
from .image_io import read_image, write_image
from .metrics import psnr
from .registration import apply_homography

MIN_PAIR_PSNR = 12.0
_MAX_REDRAWS = 10

_RATE_BANDS = ((0.7, 0.95), (1.05, 1.35))  # sample-rate gap around 1 keeps beats visible


@dataclass(frozen=True)
class MoireParams:
    camera_sample_rate: float
    view_homography: np.ndarray
    strength: float
    bayer: bool = True
    screen_pixel_pitch: float = 1.0  # stripe triplet width in reference units

    def __post_init__(self):
        h = np.asarray(self.view_homography, dtype=np.float64)
        if h.shape != (3, 3):
            raise ConfigError("view_homography must be 3x3")
        object.__setattr__(self, "view_homography", h)
        if not 0.0 <= self.strength <= 1.0:
            raise ConfigError(f"strength must lie in [0, 1], got {self.strength}")
        if self.camera_sample_rate <= 0:
            raise ConfigError("camera_sample_rate must be positive")
        if self.screen_pixel_pitch != 1.0:
            raise ConfigError("only unit screen_pixel_pitch is supported")


def draw_moire_params(rng: np.random.Generator, strength_range=(0.35, 0.95)) -> MoireParams:
    """One random parameter draw. Rates inside (0.95, 1.05) are never drawn."""
    lengths = [hi - lo for lo, hi in _RATE_BANDS]
    u = rng.uniform(0.0, sum(lengths))
    if u < lengths[0]:
        rate = _RATE_BANDS[0][0] + u
    else:
        rate = _RATE_BANDS[1][0] + (u - lengths[0])

    theta = np.deg2rad(rng.uniform(-2.5, 2.5))
    c, s = np.cos(theta), np.sin(theta)
    h = np.array(
        [
            [c, -s, rng.uniform(-1.5, 1.5)],
            [s, c, rng.uniform(-1.5, 1.5)],
            [rng.uniform(-1.0, 1.0) * 1.5e-4, rng.uniform(-1.0, 1.0) * 1.5e-4, 1.0],
        ]
    )
    return MoireParams(
        camera_sample_rate=float(rate),
        view_homography=h,
        strength=float(rng.uniform(*strength_range)),
        bayer=bool(rng.random() < 0.5),
    )


def _as_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ShapeError(f"reference must be (h, w, 1|3), got shape {image.shape}")
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    return image


def _sample_screen(reference: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Point-sample the striped screen at continuous reference coordinates.

    Stripes are nearest-neighbor on purpose: a hard subpixel grid is what
    beats against the sensor grid. Emission is tripled so that averaging the
    three stripes of a pixel returns its value.
    """
    h, w, _ = reference.shape
    cols = np.floor(3.0 * (xs + 0.5)).astype(np.int64)
    channel = np.clip(cols, 0, 3 * w - 1) % 3
    px = np.clip(cols // 3, 0, w - 1)
    py = np.clip(np.round(ys).astype(np.int64), 0, h - 1)
    values = 3.0 * reference[py, px, channel]
    out = np.zeros(xs.shape + (3,), dtype=np.float64)
    np.put_along_axis(out, channel[..., None], values[..., None], axis=-1)
    return out


def _bilinear(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Edge-clamped bilinear lookup of an (h, w, c) image at float coords."""
    h, w, _ = image.shape
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    x0 = np.clip(x0.astype(np.int64), 0, w - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y0 = np.clip(y0.astype(np.int64), 0, h - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bot * fy


_DEMOSAIC_KERNEL = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]])


def _bayer_cycle(sensor: np.ndarray) -> np.ndarray:
    """Mosaic to RGGB and reconstruct by mask-normalized bilinear filtering."""
    hs, ws, _ = sensor.shape
    yy, xx = np.mgrid[0:hs, 0:ws]
    masks = [
        (yy % 2 == 0) & (xx % 2 == 0),  # R
        (yy % 2) != (xx % 2),  # G twice per quad
        (yy % 2 == 1) & (xx % 2 == 1),  # B
    ]
    out = np.empty_like(sensor)
    for ch, mask in enumerate(masks):
        sampled = np.where(mask, sensor[:, :, ch], 0.0)
        num = ndimage.convolve(sampled, _DEMOSAIC_KERNEL, mode="nearest")
        den = ndimage.convolve(mask.astype(np.float64), _DEMOSAIC_KERNEL, mode="nearest")
        out[:, :, ch] = num / den
    return out


def simulate_capture(reference: np.ndarray, params: MoireParams) -> np.ndarray:
    """Contaminated image, pixel-aligned with the reference, values in [0, 1]."""
    reference = _as_rgb(reference)
    h, w, _ = reference.shape
    rate = params.camera_sample_rate
    hv = params.view_homography

    if params.strength == 0.0:
        return reference.copy()

    # sensor grid extent covering the warped reference plane
    corners = np.array(
        [[-0.5, -0.5], [w - 0.5, -0.5], [w - 0.5, h - 0.5], [-0.5, h - 0.5]], dtype=np.float64
    )
    air = apply_homography(hv, corners)
    u0 = np.floor(rate * air[:, 0].min()) - 1.0
    v0 = np.floor(rate * air[:, 1].min()) - 1.0
    ws_n = int(np.ceil(rate * air[:, 0].max() - u0)) + 2
    hs_n = int(np.ceil(rate * air[:, 1].max() - v0)) + 2

    hinv = np.linalg.inv(hv)
    uu, vv = np.meshgrid(np.arange(ws_n, dtype=np.float64), np.arange(hs_n, dtype=np.float64))
    sensor = np.zeros((hs_n, ws_n, 3), dtype=np.float64)
    # 2x2 box subsampling stands in for area integration over the pixel
    for du in (-0.25, 0.25):
        for dv in (-0.25, 0.25):
            ax = (uu + du + u0) / rate
            ay = (vv + dv + v0) / rate
            denom = hinv[2, 0] * ax + hinv[2, 1] * ay + hinv[2, 2]
            sx = (hinv[0, 0] * ax + hinv[0, 1] * ay + hinv[0, 2]) / denom
            sy = (hinv[1, 0] * ax + hinv[1, 1] * ay + hinv[1, 2]) / denom
            sensor += _sample_screen(reference, sx, sy)
    sensor /= 4.0

    if params.bayer:
        sensor = _bayer_cycle(sensor)

    # inverse map: reference pixel -> air -> sensor index, bilinear
    xx, yy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    denom = hv[2, 0] * xx + hv[2, 1] * yy + hv[2, 2]
    ax = (hv[0, 0] * xx + hv[0, 1] * yy + hv[0, 2]) / denom
    ay = (hv[1, 0] * xx + hv[1, 1] * yy + hv[1, 2]) / denom
    sim = _bilinear(sensor, rate * ax - u0, rate * ay - v0)

    out = reference + params.strength * (sim - reference)
    return np.clip(out, 0.0, 1.0)


def contaminate(reference: np.ndarray, rng: np.random.Generator, min_psnr: float = MIN_PAIR_PSNR):
    """Draw parameters until the pair clears the PSNR floor.

    Returns (contaminated, params, psnr). Ten failed draws raise
    SynthesisError; the caller drops that reference.
    """
    reference = _as_rgb(reference)
    for _ in range(_MAX_REDRAWS):
        params = draw_moire_params(rng)
        sim = simulate_capture(reference, params)
        value = psnr(sim, reference)
        if value >= min_psnr:
            return sim, params, value
    raise SynthesisError(
        f"no parameter draw reached {min_psnr} dB in {_MAX_REDRAWS} attempts"
    )


# ---------------------------------------------------------------------------
# reference generation and dataset assembly


def random_reference(rng: np.random.Generator, height: int = 64, width: int = 64) -> np.ndarray:
    """Smooth random color field in [0.05, 0.95].

    Low-frequency sinusoid mixtures plus blurred noise; enough structure for
    training without aliasing of its own.
    """
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    img = np.empty((height, width, 3), dtype=np.float64)
    for c in range(3):
        acc = np.full((height, width), rng.uniform(0.35, 0.65))
        for _ in range(3):
            fx, fy = rng.uniform(-0.5, 0.5, size=2) / max(height, width) * 2.0 * np.pi * 4.0
            phase = rng.uniform(0.0, 2.0 * np.pi)
            acc += rng.uniform(0.05, 0.2) * np.sin(fx * xx + fy * yy + phase)
        acc += ndimage.gaussian_filter(rng.normal(0.0, 0.35, (height, width)), 3.0)
        img[:, :, c] = acc
    return np.clip(img, 0.05, 0.95)


def _pair_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def split_sizes(n_pairs: int) -> tuple[int, int, int]:
    """90/5/5 split; validation and test never go below one pair each."""
    if n_pairs < 3:
        raise ConfigError(f"need at least 3 pairs to split, got {n_pairs}")
    n_val = max(1, round(0.05 * n_pairs))
    n_test = max(1, round(0.05 * n_pairs))
    return n_pairs - n_val - n_test, n_val, n_test


def make_dataset(
    out_dir,
    n_pairs: int,
    seed: int,
    reference_dir=None,
    size: int = 64,
) -> dict[str, Path]:
    """Generate pairs and write train/val/test manifests.

    References come from reference_dir when given (cycled if fewer than
    n_pairs), otherwise each pair gets its own random smooth reference.
    Every pair is deterministic in (seed, index) alone. Returns the manifest
    paths keyed by split name.
    """
    out_dir = Path(out_dir)
    pair_dir = out_dir / "pairs"
    pair_dir.mkdir(parents=True, exist_ok=True)

    sources: list[Path] | None = None
    if reference_dir is not None:
        sources = sorted(
            p for p in Path(reference_dir).iterdir() if p.suffix.lower() in (".png", ".ppm", ".pgm")
        )
        if not sources:
            raise DataError(f"no reference images in {reference_dir}")

    rows = []
    for i in range(n_pairs):
        rng = _pair_rng(seed, i)
        if sources is None:
            ref = random_reference(rng, size, size)
        else:
            ref = _as_rgb(read_image(sources[i % len(sources)]))
        sim, _, value = contaminate(ref, rng)
        moire_path = pair_dir / f"pair_{i:05d}_moire.png"
        ref_path = pair_dir / f"pair_{i:05d}_ref.png"
        write_image(moire_path, sim)
        write_image(ref_path, ref)
        rows.append((str(moire_path.relative_to(out_dir)), str(ref_path.relative_to(out_dir)), f"{value:.4f}"))

    n_train, n_val, n_test = split_sizes(n_pairs)
    header = ("moire", "reference", "psnr")
    manifests = {}
    for name, lo, hi in (
        ("train", 0, n_train),
        ("val", n_train, n_train + n_val),
        ("test", n_train + n_val, n_pairs),
    ):
        path = out_dir / f"{name}.tsv"
        write_manifest(path, rows[lo:hi], header=header)
        manifests[name] = path
    return manifests


def load_pairs(manifest_path) -> list[tuple[np.ndarray, np.ndarray]]:
    """Read a manifest's (moire, reference) image pairs; paths resolve
    against the manifest's directory."""
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    pairs = []
    for row in read_manifest(manifest_path):
        if len(row) < 2:
            raise DataError(f"{manifest_path}: rows need (moire, reference) columns")
        pairs.append((read_image(base / row[0]), read_image(base / row[1])))
    return pairs
