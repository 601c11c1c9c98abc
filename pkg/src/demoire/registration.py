"""Frame-based pair registration.

A display frame is a white canvas holding the reference image inside a black
border with one black block extruding outward from each edge midpoint. Its
outer boundary exposes 20 corners. Registration binarizes a photographed
frame, finds those corners, matches them against the analytic corner set of
the rendered frame, fits a homography, and warps the photo back into the
reference pixel grid.

Coordinates are (x, y) with pixel centers at integers, so region junctions
sit at half-integer positions. Arrays index as [y, x].
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (
    CleaningError,
    ConfigError,
    DataError,
    DegenerateGeometryError,
    DetectionError,
    ShapeError,
)
from .image_io import to_grayscale
from .metrics import psnr

RATIO_BANDS = ((2.2, 4.0), (0.25, 0.45))
VERIFY_ETA = 12.0

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 8.0
_HARRIS_K = 0.04
_HARRIS_SIGMA = 1.5


# ---------------------------------------------------------------------------
# frame synthesis


@dataclass(frozen=True)
class FrameSpec:
    """Layout of the display frame around a reference image.

    block_size is (along_edge, depth): the first number runs parallel to the
    border edge the block extrudes from, the second outward.
    """

    canvas_size: tuple[int, int] = (160, 160)
    border_width: int = 10
    block_size: tuple[int, int] = (24, 14)

    def __post_init__(self):
        ch, cw = self.canvas_size
        along, depth = self.block_size
        if ch <= 0 or cw <= 0:
            raise ConfigError(f"canvas_size must be positive, got {self.canvas_size}")
        if self.border_width <= 0:
            raise ConfigError("border_width must be positive")
        if along <= 0 or depth <= 0:
            # without real blocks the boundary degenerates to 4 corners
            raise ConfigError(f"block_size must be positive, got {self.block_size}")
        if along % 2:
            raise ConfigError("block along-edge extent must be even to center on the border")


def frame_corners(spec: FrameSpec, ref_h: int, ref_w: int) -> np.ndarray:
    """The 20 outer-boundary corner coordinates, unordered (x, y) rows."""
    ch, cw = spec.canvas_size
    b = spec.border_width
    along, depth = spec.block_size
    ox = (cw - ref_w) // 2 - b
    oy = (ch - ref_h) // 2 - b
    x1 = ox + ref_w + 2 * b
    y1 = oy + ref_h + 2 * b
    cx, cy = (ox + x1) // 2, (oy + y1) // 2

    pts = [(ox, oy), (x1, oy), (x1, y1), (ox, y1)]
    half = along // 2
    # per block: two junctions on the border edge, two free outer corners
    pts += [(cx - half, oy), (cx - half, oy - depth), (cx + half, oy - depth), (cx + half, oy)]
    pts += [(cx - half, y1), (cx - half, y1 + depth), (cx + half, y1 + depth), (cx + half, y1)]
    pts += [(ox, cy - half), (ox - depth, cy - half), (ox - depth, cy + half), (ox, cy + half)]
    pts += [(x1, cy - half), (x1 + depth, cy - half), (x1 + depth, cy + half), (x1, cy + half)]
    return np.asarray(pts, dtype=np.float64) - 0.5  # junction convention


def synthesize_frame(reference: np.ndarray, spec: FrameSpec = FrameSpec()):
    """Render the frame and return (image, analytic CornerSet)."""
    reference = np.asarray(reference, dtype=np.float64)
    if reference.ndim == 2:
        reference = reference[:, :, None]
    if reference.ndim != 3 or reference.shape[2] not in (1, 3):
        raise ShapeError(f"reference must be (h, w, 1|3), got {reference.shape}")
    rh, rw, rc = reference.shape
    ch, cw = spec.canvas_size
    b = spec.border_width
    along, depth = spec.block_size
    if (cw - rw) % 2 or (ch - rh) % 2:
        raise ConfigError(
            f"canvas {cw}x{ch} and reference {rw}x{rh} must center on integer pixels"
        )
    need_w = rw + 2 * b + 2 * depth
    need_h = rh + 2 * b + 2 * depth
    if need_w > cw or need_h > ch:
        raise ShapeError(
            f"reference {rw}x{rh} too large: frame needs {need_w}x{need_h}, canvas is {cw}x{ch}"
        )
    if along >= rw + 2 * b or along >= rh + 2 * b:
        raise ConfigError("block along-edge extent must be smaller than the border rectangle")

    img = np.ones((ch, cw, rc), dtype=np.float64)
    ox = (cw - rw) // 2 - b
    oy = (ch - rh) // 2 - b
    x1, y1 = ox + rw + 2 * b, oy + rh + 2 * b
    img[oy:y1, ox:x1] = 0.0
    img[oy + b : y1 - b, ox + b : x1 - b] = reference
    cx, cy = (ox + x1) // 2, (oy + y1) // 2
    half = along // 2
    img[oy - depth : oy, cx - half : cx + half] = 0.0
    img[y1 : y1 + depth, cx - half : cx + half] = 0.0
    img[cy - half : cy + half, ox - depth : ox] = 0.0
    img[cy - half : cy + half, x1 : x1 + depth] = 0.0

    return img, CornerSet.from_points(frame_corners(spec, rh, rw))


def content_origin(spec: FrameSpec, ref_h: int, ref_w: int) -> tuple[int, int]:
    """(y, x) of the reference region's top-left pixel inside the canvas."""
    ch, cw = spec.canvas_size
    return (ch - ref_h) // 2, (cw - ref_w) // 2


# ---------------------------------------------------------------------------
# canonical corner ordering


def _hull(points: np.ndarray) -> np.ndarray:
    """Indices of the convex hull, counter-clockwise in y-up orientation."""
    order = np.lexsort((points[:, 1], points[:, 0]))

    def build(indices):
        out = []
        for i in indices:
            while len(out) >= 2:
                o, a = points[out[-2]], points[out[-1]]
                cross = (a[0] - o[0]) * (points[i][1] - o[1]) - (a[1] - o[1]) * (points[i][0] - o[0])
                if cross >= 0:  # not a strict right turn in array coords
                    out.pop()
                else:
                    break
            out.append(i)
        return out

    lower = build(order)
    upper = build(order[::-1])
    return np.asarray(lower[:-1] + upper[:-1], dtype=np.intp)


def _frame_corner_indices(points: np.ndarray) -> np.ndarray:
    """The 4 border corners: hull vertices with the largest turning angles."""
    hull = _hull(points)
    if hull.size < 4:
        raise DegenerateGeometryError("corner set has fewer than 4 hull vertices")
    p = points[hull]
    prev = np.roll(p, 1, axis=0)
    nxt = np.roll(p, -1, axis=0)
    v_in = p - prev
    v_out = nxt - p
    dot = (v_in * v_out).sum(axis=1)
    norm = np.linalg.norm(v_in, axis=1) * np.linalg.norm(v_out, axis=1)
    turn = np.arccos(np.clip(dot / np.maximum(norm, 1e-12), -1.0, 1.0))
    return hull[np.argsort(turn)[-4:]]


@dataclass(frozen=True)
class CornerSet:
    """Exactly 20 corners in canonical order.

    Order: counter-clockwise (y-up) by polar angle about the centroid,
    starting at the top-left border corner. The border corners are found on
    the convex hull by turning angle, which stays stable under in-plane
    rotations up to 45 degrees; picking the one pointing nearest up-left
    then tolerates the promised < 30 degrees.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (20, 2):
            raise ShapeError(f"corner set needs shape (20, 2), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise DataError("corner set contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_points(cls, points) -> "CornerSet":
        pts = np.asarray(points, dtype=np.float64)
        if pts.shape != (20, 2):
            raise ShapeError(f"corner set needs shape (20, 2), got {pts.shape}")
        centroid = pts.mean(axis=0)
        frame_idx = _frame_corner_indices(pts)
        d = pts[frame_idx] - centroid
        ang = np.arctan2(-d[:, 1], d[:, 0])  # y-up angles
        start = frame_idx[np.argmin(np.abs(_wrap_angle(ang - 3.0 * np.pi / 4.0)))]

        d_all = pts - centroid
        ang_all = np.arctan2(-d_all[:, 1], d_all[:, 0])
        rel = np.mod(ang_all - ang_all[start], 2.0 * np.pi)
        rel[start] = 0.0
        order = np.lexsort((np.linalg.norm(d_all, axis=1), rel))
        return cls(pts[order])


def _wrap_angle(a):
    return np.mod(a + np.pi, 2.0 * np.pi) - np.pi


# ---------------------------------------------------------------------------
# binarization


def binarize(image: np.ndarray, threshold: float | None = None) -> np.ndarray:
    """Grayscale-then-threshold to a {0, 1} float map; None picks Otsu's split."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = to_grayscale(image)[:, :, 0]
    if image.ndim != 2:
        raise ShapeError(f"binarize expects an image, got shape {image.shape}")
    if threshold is None:
        threshold = otsu_threshold(image)
    return (image > threshold).astype(np.float64)


def otsu_threshold(gray: np.ndarray) -> float:
    """Between-class variance maximizer on the 256-bin histogram, as a [0,1] split."""
    levels = np.clip(np.floor(gray * 255.0 + 0.5), 0, 255).astype(np.intp)
    hist = np.bincount(levels.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    w0 = np.cumsum(hist)
    mu = np.cumsum(hist * np.arange(256))
    mu_total = mu[-1]
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        m0 = mu / w0
        m1 = (mu_total - mu) / w1
        between = w0 * w1 * (m0 - m1) ** 2
    between[~np.isfinite(between)] = -1.0
    k = int(np.argmax(between))
    return (k + 0.5) / 255.0


# ---------------------------------------------------------------------------
# corner detection


def _outer_boundary_mask(black: np.ndarray) -> np.ndarray:
    """Pixels of the largest interior black component that touch the outside.

    Outside means reachable from the canvas edge without entering the
    component, so border fill from warping cannot leak into the hole and
    interior content corners never qualify.
    """
    labels, n = ndimage.label(black, structure=np.ones((3, 3), dtype=np.intp))
    if n == 0:
        raise DetectionError("no black region to trace")
    edge_labels = set(labels[0].tolist()) | set(labels[-1].tolist())
    edge_labels |= set(labels[:, 0].tolist()) | set(labels[:, -1].tolist())
    edge_labels.discard(0)
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    for lab in edge_labels:
        counts[lab] = 0  # fill regions from warping touch the canvas edge
    if not counts.any():
        raise DetectionError("no interior black component (frame touches the canvas edge?)")
    comp = labels == int(np.argmax(counts))

    outside = np.zeros_like(comp)
    outside[0], outside[-1], outside[:, 0], outside[:, -1] = True, True, True, True
    outside &= ~comp
    outside = ndimage.binary_propagation(outside, mask=~comp)
    near = ndimage.binary_dilation(outside, structure=np.ones((3, 3), dtype=bool))
    return comp & near


def harris_response(binary: np.ndarray) -> np.ndarray:
    ix = ndimage.convolve(binary, _SOBEL_X, mode="nearest")
    iy = ndimage.convolve(binary, _SOBEL_X.T, mode="nearest")
    sxx = ndimage.gaussian_filter(ix * ix, _HARRIS_SIGMA)
    syy = ndimage.gaussian_filter(iy * iy, _HARRIS_SIGMA)
    sxy = ndimage.gaussian_filter(ix * iy, _HARRIS_SIGMA)
    return sxx * syy - sxy * sxy - _HARRIS_K * (sxx + syy) ** 2


def detect_corners(binary: np.ndarray, intensity: np.ndarray | None = None) -> np.ndarray:
    """Corner candidates on the outer boundary of the frame.

    Harris peaks seed the candidates; each is then pulled to subpixel
    position by gradient orthogonality, which undoes the 1-2 px drift that
    staircase edges cause on rotated frames. Pass the grayscale photo as
    intensity when available: its smooth edge ramps keep the subpixel
    information that thresholding threw away, and localization improves
    roughly fourfold on warped frames. Returns (n, 3) rows of
    (x, y, response). Recall matters more than precision; the ratio filter
    downstream discards edge responses.
    """
    binary = np.asarray(binary, dtype=np.float64)
    if binary.ndim != 2:
        raise ShapeError(f"detect_corners expects a binary map, got shape {binary.shape}")
    if intensity is not None:
        intensity = np.asarray(intensity, dtype=np.float64)
        if intensity.shape != binary.shape:
            raise ShapeError(
                f"intensity shape {intensity.shape} does not match binary {binary.shape}"
            )
    boundary = _outer_boundary_mask(binary < 0.5)
    response = harris_response(binary)
    masked = np.where(boundary, response, -np.inf)
    peak = masked.max()
    if not np.isfinite(peak) or peak <= 0:
        raise DetectionError("no corner response on the traced boundary")
    is_max = masked == ndimage.maximum_filter(masked, size=5, mode="constant", cval=-np.inf)
    keep = boundary & is_max & (masked >= 0.01 * peak)
    ys, xs = np.nonzero(keep)
    src = binary if intensity is None else intensity
    refined = [refine_corner(src, x, y) for x, y in zip(xs, ys)]
    out = np.asarray(
        [(rx, ry, response[y, x]) for (rx, ry), x, y in zip(refined, xs, ys)], dtype=np.float64
    )
    return out.reshape(-1, 3)


# ---------------------------------------------------------------------------
# cleaning


def window_ratio(binary: np.ndarray, x: int, y: int, neighborhood: int = 11) -> float:
    """black:white pixel count ratio in the window centered at (x, y).

    Even neighborhoods center on the junction between (x, y) and its
    down-right neighbors. All-white windows give 0, all-black inf.
    """
    h, w = binary.shape
    r0 = neighborhood // 2
    r1 = neighborhood - r0
    ylo, yhi = max(0, y - r0), min(h, y + r1)
    xlo, xhi = max(0, x - r0), min(w, x + r1)
    win = binary[ylo:yhi, xlo:xhi]
    blacks = int((win < 0.5).sum())
    whites = win.size - blacks
    if whites == 0:
        return np.inf
    return blacks / whites


def ratio_in_bands(ratio: float, bands=RATIO_BANDS) -> bool:
    return any(lo <= ratio <= hi for lo, hi in bands)


def refine_corner(binary: np.ndarray, x: int, y: int, neighborhood: int = 11, max_iter: int = 4):
    """Subpixel position from gradient orthogonality.

    Every edge pixel in the window votes that the corner lies on its edge
    line; the least-squares intersection of those lines is the corner. The
    solve iterates with the window re-centered on the running estimate, so a
    peak that started a couple of pixels off (staircase edges under rotation
    push it that far) still converges onto the junction. Votes are weighted
    down toward the window rim, and the estimate may not leave a 3.5 px
    radius around the seed: both guards keep a strong unrelated edge a few
    pixels away (warp fill borders, mostly) from capturing the solve. Falls
    back to the integer position when the gradient field is degenerate.
    """
    h, w = binary.shape
    r = neighborhood // 2
    sigma = r / 2.5
    x0, y0 = float(x), float(y)
    cx, cy = x0, y0
    for _ in range(max_iter):
        px, py = int(round(cx)), int(round(cy))
        ylo, yhi = max(0, py - r - 1), min(h, py + r + 2)
        xlo, xhi = max(0, px - r - 1), min(w, px + r + 2)
        patch = binary[ylo:yhi, xlo:xhi]
        gx = ndimage.convolve(patch, _SOBEL_X, mode="nearest")
        gy = ndimage.convolve(patch, _SOBEL_X.T, mode="nearest")
        yy, xx = np.mgrid[ylo:yhi, xlo:xhi]
        wgt = np.exp(-((xx - px) ** 2 + (yy - py) ** 2) / (2.0 * sigma * sigma))

        a11 = (wgt * gx * gx).sum()
        a12 = (wgt * gx * gy).sum()
        a22 = (wgt * gy * gy).sum()
        b1 = (wgt * (gx * gx * xx + gx * gy * yy)).sum()
        b2 = (wgt * (gx * gy * xx + gy * gy * yy)).sum()
        det = a11 * a22 - a12 * a12
        if det <= 1e-9 * max(a11 + a22, 1e-12) ** 2:
            break
        rx = (a22 * b1 - a12 * b2) / det
        ry = (a11 * b2 - a12 * b1) / det
        if (rx - px) ** 2 + (ry - py) ** 2 > 9.0:  # runaway solution, keep the pixel
            break
        if (rx - x0) ** 2 + (ry - y0) ** 2 > 3.5**2:  # walked off the seeded corner
            break
        moved = (rx - cx) ** 2 + (ry - cy) ** 2
        cx, cy = float(rx), float(ry)
        if moved < 0.05**2:
            break
    return cx, cy


def _bracket_pixels(x: float, y: float) -> list[tuple[int, int]]:
    xs = {int(np.floor(x)), int(np.ceil(x))}
    ys = {int(np.floor(y)), int(np.ceil(y))}
    return [(px, py) for px in sorted(xs) for py in sorted(ys)]


def clean_corners(
    candidates: np.ndarray,
    binary: np.ndarray,
    neighborhood: int = 11,
    ratio_bands=RATIO_BANDS,
    min_dist: float = 10.0,
) -> CornerSet:
    """Ratio-filter, deduplicate, and canonically order candidates.

    A subpixel candidate sits between up to four pixels, and the discrete
    window has no unique center there, so the ratio test passes when any of
    the bracketing centers lands in a band. Raises CleaningError carrying
    the survivor list when anything other than exactly 20 corners remain;
    callers discard the pair.
    """
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim != 2 or candidates.shape[1] != 3:
        raise ShapeError(f"candidates must be (n, 3) rows of x, y, response, got {candidates.shape}")
    binary = np.asarray(binary, dtype=np.float64)

    passed = [
        (x, y, resp)
        for x, y, resp in candidates
        if any(
            ratio_in_bands(window_ratio(binary, px, py, neighborhood), ratio_bands)
            for px, py in _bracket_pixels(x, y)
        )
    ]
    # response-ranked greedy dedup; ties broken by position so that candidate
    # order never affects the result
    passed.sort(key=lambda c: (-c[2], c[1], c[0]))
    kept: list[tuple[float, float, float]] = []
    for x, y, resp in passed:
        if all((x - kx) ** 2 + (y - ky) ** 2 >= min_dist * min_dist for kx, ky, _ in kept):
            kept.append((x, y, resp))

    if len(kept) != 20:
        survivors = np.asarray([(x, y) for x, y, _ in kept], dtype=np.float64)
        raise CleaningError(
            f"corner cleaning left {len(kept)} corners, need exactly 20", survivors=survivors
        )
    return CornerSet.from_points(np.asarray([(x, y) for x, y, _ in kept], dtype=np.float64))


# ---------------------------------------------------------------------------
# homography estimation


def _as_points(obj) -> np.ndarray:
    pts = obj.points if isinstance(obj, CornerSet) else np.asarray(obj, dtype=np.float64)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
        raise ShapeError(f"need at least 4 (x, y) points, got shape {pts.shape}")
    return pts


def _hartley_normalization(pts: np.ndarray) -> np.ndarray:
    centroid = pts.mean(axis=0)
    dist = np.linalg.norm(pts - centroid, axis=1).mean()
    if dist < 1e-12:
        raise DegenerateGeometryError("all points coincide")
    s = np.sqrt(2.0) / dist
    return np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )


def estimate_homography(src, dst) -> np.ndarray:
    """Direct linear transform over all correspondences, Hartley-normalized.

    Returns the 3x3 matrix with h33 = 1 mapping src (x, y) to dst (x, y).
    """
    sp = _as_points(src)
    dp = _as_points(dst)
    if sp.shape != dp.shape:
        raise ShapeError(f"point sets differ: {sp.shape} vs {dp.shape}")

    ts = _hartley_normalization(sp)
    td = _hartley_normalization(dp)
    sn = apply_homography(ts, sp)
    dn = apply_homography(td, dp)

    n = sp.shape[0]
    a = np.zeros((2 * n, 9))
    a[0::2, 0] = -sn[:, 0]
    a[0::2, 1] = -sn[:, 1]
    a[0::2, 2] = -1.0
    a[0::2, 6] = dn[:, 0] * sn[:, 0]
    a[0::2, 7] = dn[:, 0] * sn[:, 1]
    a[0::2, 8] = dn[:, 0]
    a[1::2, 3] = -sn[:, 0]
    a[1::2, 4] = -sn[:, 1]
    a[1::2, 5] = -1.0
    a[1::2, 6] = dn[:, 1] * sn[:, 0]
    a[1::2, 7] = dn[:, 1] * sn[:, 1]
    a[1::2, 8] = dn[:, 1]

    _, sing, vt = np.linalg.svd(a)
    if sing[-2] <= 1e-12 * sing[0]:
        raise DegenerateGeometryError("degenerate point configuration (solution not unique)")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    if abs(h[2, 2]) < 1e-12:
        raise DegenerateGeometryError("homography has vanishing scale term")
    h = h / h[2, 2]
    if abs(np.linalg.det(h)) <= 1e-9:
        raise DegenerateGeometryError("estimated homography is singular")
    return h


def apply_homography(h: np.ndarray, points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    ones = np.ones((pts.shape[0], 1))
    proj = np.hstack([pts, ones]) @ np.asarray(h, dtype=np.float64).T
    wcol = proj[:, 2:3]
    if np.any(np.abs(wcol) < 1e-12):
        raise DegenerateGeometryError("point maps to infinity under homography")
    return proj[:, :2] / wcol


def reprojection_error(h: np.ndarray, src, dst) -> float:
    """Mean Euclidean distance between H(src) and dst."""
    sp, dp = _as_points(src), _as_points(dst)
    return float(np.linalg.norm(apply_homography(h, sp) - dp, axis=1).mean())


# ---------------------------------------------------------------------------
# warping and intensity


def warp(image: np.ndarray, h: np.ndarray, out_size: tuple[int, int], fill: str = "black"):
    """Resample through H by inverse mapping with bilinear interpolation.

    H maps source coordinates to output coordinates; out_size is (height,
    width). fill 'black' pads with zeros, 'edge' clamps to border pixels.
    """
    image = np.asarray(image, dtype=np.float64)
    squeeze = image.ndim == 2
    if squeeze:
        image = image[:, :, None]
    if image.ndim != 3:
        raise ShapeError(f"warp expects an image, got shape {image.shape}")
    if fill not in ("black", "edge"):
        raise ConfigError(f"fill must be 'black' or 'edge', got {fill!r}")
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (3, 3):
        raise ShapeError("homography must be 3x3")
    det = np.linalg.det(h)
    if not np.isfinite(det) or abs(det) <= 1e-12:
        raise DegenerateGeometryError("cannot invert a singular homography")
    hinv = np.linalg.inv(h)

    oh, ow = out_size
    ih, iw, _ = image.shape
    xx, yy = np.meshgrid(np.arange(ow, dtype=np.float64), np.arange(oh, dtype=np.float64))
    denom = hinv[2, 0] * xx + hinv[2, 1] * yy + hinv[2, 2]
    denom = np.where(np.abs(denom) < 1e-12, np.nan, denom)
    sx = (hinv[0, 0] * xx + hinv[0, 1] * yy + hinv[0, 2]) / denom
    sy = (hinv[1, 0] * xx + hinv[1, 1] * yy + hinv[1, 2]) / denom
    sx = np.where(np.isfinite(sx), sx, -1e9)
    sy = np.where(np.isfinite(sy), sy, -1e9)

    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    out = np.empty((oh, ow, image.shape[2]), dtype=np.float64)
    if fill == "edge":
        xs0 = np.clip(x0, 0, iw - 1)
        xs1 = np.clip(x0 + 1, 0, iw - 1)
        ys0 = np.clip(y0, 0, ih - 1)
        ys1 = np.clip(y0 + 1, 0, ih - 1)
        for c in range(image.shape[2]):
            ch = image[:, :, c]
            top = ch[ys0, xs0] * (1 - fx) + ch[ys0, xs1] * fx
            bot = ch[ys1, xs0] * (1 - fx) + ch[ys1, xs1] * fx
            out[:, :, c] = top * (1 - fy) + bot * fy
    else:
        valid = lambda xi, yi: (xi >= 0) & (xi < iw) & (yi >= 0) & (yi < ih)  # noqa: E731
        xs0 = np.clip(x0, 0, iw - 1)
        xs1 = np.clip(x0 + 1, 0, iw - 1)
        ys0 = np.clip(y0, 0, ih - 1)
        ys1 = np.clip(y0 + 1, 0, ih - 1)
        m00 = valid(x0, y0)
        m10 = valid(x0 + 1, y0)
        m01 = valid(x0, y0 + 1)
        m11 = valid(x0 + 1, y0 + 1)
        for c in range(image.shape[2]):
            ch = image[:, :, c]
            top = np.where(m00, ch[ys0, xs0], 0.0) * (1 - fx) + np.where(m10, ch[ys0, xs1], 0.0) * fx
            bot = np.where(m01, ch[ys1, xs0], 0.0) * (1 - fx) + np.where(m11, ch[ys1, xs1], 0.0) * fx
            out[:, :, c] = top * (1 - fy) + bot * fy
    return out[:, :, 0] if squeeze else out


def correct_intensity(source: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Shift each channel of source to the reference's mean, then clamp."""
    source = np.asarray(source, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if source.shape != reference.shape:
        raise ShapeError(f"intensity correction needs matching shapes: {source.shape} vs {reference.shape}")
    axes = (0, 1) if source.ndim == 3 else None
    shift = reference.mean(axis=axes) - source.mean(axis=axes)
    return np.clip(source + shift, 0.0, 1.0)


def verify_pair(aligned: np.ndarray, reference: np.ndarray, eta: float = VERIFY_ETA):
    """(accepted, psnr): accept when alignment quality reaches eta dB."""
    value = psnr(aligned, reference)
    return value >= eta, value


# ---------------------------------------------------------------------------
# end-to-end pair alignment


@dataclass
class AlignResult:
    aligned: np.ndarray
    homography: np.ndarray
    corners: CornerSet
    candidate_count: int
    residual: float  # mean reprojection distance over the 20 matches, px
    psnr: float
    accepted: bool


def align_pair(
    photo: np.ndarray,
    reference: np.ndarray,
    spec: FrameSpec = FrameSpec(),
    eta: float = VERIFY_ETA,
    threshold: float | None = None,
    min_dist: float = 10.0,
) -> AlignResult:
    """Register a photographed frame against its reference image.

    The displayed frame's corners are known analytically from the spec, so
    only the photo side needs detection. The photo is warped into the frame
    canvas, the reference region cropped out, intensity-corrected, and
    PSNR-gated.
    """
    reference = np.asarray(reference, dtype=np.float64)
    if reference.ndim == 2:
        reference = reference[:, :, None]
    rh, rw = reference.shape[:2]
    target = CornerSet.from_points(frame_corners(spec, rh, rw))

    photo_arr = np.asarray(photo, dtype=np.float64)
    gray = to_grayscale(photo_arr)[:, :, 0] if photo_arr.ndim == 3 else photo_arr
    binary = binarize(photo_arr, threshold)
    candidates = detect_corners(binary, intensity=gray)
    corners = clean_corners(candidates, binary, min_dist=min_dist)
    h = estimate_homography(corners, target)
    residual = reprojection_error(h, corners, target)

    canvas = warp(np.asarray(photo, dtype=np.float64), h, spec.canvas_size, fill="black")
    oy, ox = content_origin(spec, rh, rw)
    if canvas.ndim == 2:
        canvas = canvas[:, :, None]
    cropped = canvas[oy : oy + rh, ox : ox + rw]
    if cropped.shape[2] != reference.shape[2]:
        if cropped.shape[2] == 3 and reference.shape[2] == 1:
            cropped = cropped.mean(axis=2, keepdims=True)
        else:
            cropped = np.repeat(cropped, 3, axis=2)
    corrected = correct_intensity(cropped, reference)
    accepted, value = verify_pair(corrected, reference, eta)
    return AlignResult(
        aligned=corrected,
        homography=h,
        corners=corners,
        candidate_count=int(len(candidates)),
        residual=residual,
        psnr=value,
        accepted=accepted,
    )
