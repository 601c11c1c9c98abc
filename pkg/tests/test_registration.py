"""Frame synthesis, corner pipeline, homography fitting, warping."""

import numpy as np
import pytest

from demoire import (
    CleaningError,
    ConfigError,
    DegenerateGeometryError,
    DetectionError,
    ShapeError,
)
from demoire.registration import (
    AlignResult,
    CornerSet,
    FrameSpec,
    align_pair,
    apply_homography,
    binarize,
    clean_corners,
    correct_intensity,
    detect_corners,
    estimate_homography,
    frame_corners,
    otsu_threshold,
    reprojection_error,
    synthesize_frame,
    verify_pair,
    warp,
    window_ratio,
)

# the worked example: 64x64 reference, border 8, 16x8 blocks, 128 canvas
EXAMPLE_SPEC = FrameSpec(canvas_size=(128, 128), border_width=8, block_size=(16, 8))

EXAMPLE_CORNERS = {
    (23.5, 23.5), (103.5, 23.5), (103.5, 103.5), (23.5, 103.5),
    (55.5, 23.5), (55.5, 15.5), (71.5, 15.5), (71.5, 23.5),
    (55.5, 103.5), (55.5, 111.5), (71.5, 111.5), (71.5, 103.5),
    (23.5, 55.5), (15.5, 55.5), (15.5, 71.5), (23.5, 71.5),
    (103.5, 55.5), (111.5, 55.5), (111.5, 71.5), (103.5, 71.5),
}


def smooth_ref(h=64, w=64, c=3):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = 0.5 + 0.25 * np.sin(xx / 7.0) * np.cos(yy / 9.0) + 0.08 * np.sin((xx + yy) / 4.0)
    img = np.clip(img, 0.15, 0.85)
    return np.repeat(img[:, :, None], c, axis=2)


def rotation_h(theta_deg, cx, cy, scale=1.0):
    t = np.deg2rad(theta_deg)
    c, s = scale * np.cos(t), scale * np.sin(t)
    r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    shift = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1.0]])
    unshift = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1.0]])
    return shift @ r @ unshift


class TestFrameSpec:
    def test_zero_block_rejected(self):
        with pytest.raises(ConfigError):
            FrameSpec(block_size=(0, 8))

    def test_odd_block_rejected(self):
        with pytest.raises(ConfigError):
            FrameSpec(block_size=(15, 8))

    def test_bad_border(self):
        with pytest.raises(ConfigError):
            FrameSpec(border_width=0)


class TestSynthesizeFrame:
    def test_example_corner_coordinates(self):
        img, corners = synthesize_frame(smooth_ref(), EXAMPLE_SPEC)
        got = {(x, y) for x, y in corners.points}
        assert got == EXAMPLE_CORNERS

    def test_example_pixels(self):
        img, _ = synthesize_frame(smooth_ref(), EXAMPLE_SPEC)
        assert img.shape == (128, 128, 3)
        assert np.all(img[0] == 1.0) and np.all(img[:, 0] == 1.0)  # white field
        assert np.all(img[24:32, 24:104] == 0.0)  # border strip
        assert np.all(img[16:24, 56:72] == 0.0)  # top block
        assert np.all(img[15, 56:72] == 1.0)  # one row above it
        np.testing.assert_array_equal(img[32:96, 32:96], smooth_ref())

    def test_reference_too_large(self):
        with pytest.raises(ShapeError, match="too large"):
            synthesize_frame(smooth_ref(100, 100), EXAMPLE_SPEC)

    def test_uncenterable_reference(self):
        with pytest.raises(ConfigError):
            synthesize_frame(smooth_ref(63, 64), EXAMPLE_SPEC)

    def test_grayscale_reference(self):
        img, corners = synthesize_frame(smooth_ref(c=1), EXAMPLE_SPEC)
        assert img.shape == (128, 128, 1)
        assert len(corners.points) == 20


class TestCornerSet:
    def test_starts_at_top_left_and_walks_left_side(self):
        _, corners = synthesize_frame(smooth_ref(), EXAMPLE_SPEC)
        pts = corners.points
        assert tuple(pts[0]) == (23.5, 23.5)
        assert tuple(pts[1]) == (23.5, 55.5)  # first junction down the left side
        assert tuple(pts[5]) == (23.5, 103.5)  # bottom-left border corner is 6th

    def test_permutation_invariant(self, rng):
        raw = frame_corners(EXAMPLE_SPEC, 64, 64)
        base = CornerSet.from_points(raw).points
        for _ in range(5):
            shuffled = raw[rng.permutation(20)]
            np.testing.assert_array_equal(CornerSet.from_points(shuffled).points, base)

    @pytest.mark.parametrize("theta", [-25.0, -10.0, 10.0, 25.0])
    def test_order_survives_rotation(self, theta, rng):
        raw = frame_corners(EXAMPLE_SPEC, 64, 64)
        base = CornerSet.from_points(raw).points
        h = rotation_h(theta, 63.5, 63.5)
        rotated = apply_homography(h, base)
        got = CornerSet.from_points(rotated[rng.permutation(20)]).points
        np.testing.assert_allclose(got, rotated, atol=1e-9)

    def test_wrong_count_rejected(self):
        with pytest.raises(ShapeError):
            CornerSet.from_points(np.zeros((19, 2)))


class TestBinarize:
    def test_all_white_stays_white(self):
        assert np.all(binarize(np.ones((10, 10, 3))) == 1.0)

    def test_fixed_threshold_matches_mask(self):
        img, _ = synthesize_frame(np.full((64, 64, 3), 1.0), EXAMPLE_SPEC)
        binary = binarize(img, threshold=0.5)
        np.testing.assert_array_equal(binary, img[:, :, 0])

    def test_otsu_separates_bimodal(self, rng):
        img = np.where(rng.random((40, 40)) < 0.6, 0.2, 0.8)
        t = otsu_threshold(img)
        assert 0.2 < t < 0.8
        binary = binarize(img, None)
        np.testing.assert_array_equal(binary, (img > 0.5).astype(float))

    def test_grayscale_by_channel_mean(self):
        img = np.zeros((4, 4, 3))
        img[:, :, 2] = 1.0  # mean 1/3
        assert np.all(binarize(img, threshold=0.5) == 0.0)
        assert np.all(binarize(img, threshold=0.3) == 1.0)


def _match_errors(found_xy, truth_xy):
    d = np.linalg.norm(found_xy[:, None, :] - truth_xy[None, :, :], axis=2)
    return d.min(axis=0)


class TestDetectCorners:
    def test_clean_frame_finds_all_twenty(self):
        img, truth = synthesize_frame(smooth_ref(), FrameSpec())
        cands = detect_corners(binarize(img, 0.5))
        errs = _match_errors(cands[:, :2], truth.points)
        assert errs.max() < 1.0

    def test_rotated_frame(self):
        img, truth = synthesize_frame(smooth_ref(), FrameSpec())
        h = rotation_h(10.0, 79.5, 79.5)
        rotated = warp(img, h, (160, 160), fill="black")
        cands = detect_corners(binarize(rotated, 0.5))
        errs = _match_errors(cands[:, :2], apply_homography(h, truth.points))
        assert errs.max() < 1.5

    def test_all_white_errors(self):
        with pytest.raises(DetectionError):
            detect_corners(np.ones((32, 32)))

    def test_black_touching_edge_excluded(self):
        # only edge-touching black present: nothing interior to trace
        binary = np.ones((32, 32))
        binary[:3] = 0.0
        with pytest.raises(DetectionError):
            detect_corners(binary)


class TestWindowRatio:
    def test_analytic_three(self):
        binary = np.ones((24, 24))
        binary[:12, :] = 0.0
        binary[:, :12] = 0.0
        assert window_ratio(binary, 12, 12, neighborhood=12) == 3.0

    def test_analytic_third(self):
        binary = np.ones((24, 24))
        binary[:12, :12] = 0.0
        assert window_ratio(binary, 12, 12, neighborhood=12) == pytest.approx(1.0 / 3.0)

    def test_straight_edge_is_one(self):
        binary = np.ones((24, 24))
        binary[:, :12] = 0.0
        assert window_ratio(binary, 12, 12, neighborhood=12) == 1.0

    def test_all_black_and_all_white(self):
        assert window_ratio(np.zeros((24, 24)), 12, 12) == np.inf
        assert window_ratio(np.ones((24, 24)), 12, 12) == 0.0


class TestCleanCorners:
    def test_exact_twenty_with_subpixel_accuracy(self):
        img, truth = synthesize_frame(smooth_ref(), FrameSpec())
        binary = binarize(img, 0.5)
        corners = clean_corners(detect_corners(binary), binary)
        errs = _match_errors(corners.points, truth.points)
        assert errs.mean() < 0.35
        assert errs.max() < 1.0

    def test_small_frame_needs_smaller_min_dist(self):
        # the worked example has true corners only 8 px apart
        img, truth = synthesize_frame(smooth_ref(), EXAMPLE_SPEC)
        binary = binarize(img, 0.5)
        corners = clean_corners(detect_corners(binary), binary, min_dist=4.0)
        assert _match_errors(corners.points, truth.points).max() < 1.0

    def test_injected_false_candidates_rejected(self, rng):
        img, truth = synthesize_frame(smooth_ref(), FrameSpec())
        binary = binarize(img, 0.5)
        cands = detect_corners(binary)
        fakes = np.array([
            [79.0, 23.0, 1e9],  # straight stretch of the border top edge
            [79.0, 33.0, 1e9],  # border bottom edge of the top strip
            [5.0, 5.0, 1e9],    # open white field
            [79.0, 79.0, 1e9],  # content interior
        ])
        corners = clean_corners(np.vstack([cands, fakes]), binary)
        assert _match_errors(corners.points, truth.points).max() < 1.0

    def test_candidate_order_irrelevant(self, rng):
        img, _ = synthesize_frame(smooth_ref(), FrameSpec())
        binary = binarize(img, 0.5)
        cands = detect_corners(binary)
        a = clean_corners(cands, binary).points
        b = clean_corners(cands[rng.permutation(len(cands))], binary).points
        np.testing.assert_array_equal(a, b)

    def test_too_few_survivors_carries_list(self):
        binary = np.ones((40, 40))
        binary[10:30, 10:30] = 0.0
        cands = detect_corners(binary)  # a plain square: 4 corners only
        with pytest.raises(CleaningError) as err:
            clean_corners(cands, binary)
        assert err.value.survivors is not None
        assert len(err.value.survivors) < 20


class TestEstimateHomography:
    def test_identity(self):
        pts = frame_corners(FrameSpec(), 64, 64)
        h = estimate_homography(pts, pts)
        np.testing.assert_allclose(h, np.eye(3), atol=1e-9)

    def test_recovers_known_homography(self):
        pts = frame_corners(FrameSpec(), 64, 64)
        true = np.array([
            [1.02, 0.013, 4.0],
            [-0.017, 0.985, -2.5],
            [1.2e-4, -0.8e-4, 1.0],
        ])
        est = estimate_homography(pts, apply_homography(true, pts))
        assert np.linalg.norm(est - true) / np.linalg.norm(true) < 1e-6

    def test_noise_monte_carlo(self):
        pts = frame_corners(FrameSpec(), 64, 64)
        rng = np.random.default_rng(42)
        errs = []
        for _ in range(100):
            true = rotation_h(rng.uniform(-8, 8), 79.5, 79.5)
            true[0, 2] += rng.uniform(-5, 5)
            true[1, 2] += rng.uniform(-5, 5)
            true[2, 0] = rng.uniform(-1, 1) * 2e-4
            true[2, 1] = rng.uniform(-1, 1) * 2e-4
            clean_dst = apply_homography(true, pts)
            noisy = clean_dst + rng.normal(0.0, 0.5, clean_dst.shape)
            est = estimate_homography(pts, noisy)
            errs.append(reprojection_error(est, pts, clean_dst))
        assert np.mean(errs) < 0.5

    def test_scale_equivariance(self):
        pts = frame_corners(FrameSpec(), 64, 64)
        true = rotation_h(5.0, 79.5, 79.5)
        true[2, 0] = 1e-4
        dst = apply_homography(true, pts)
        h1 = estimate_homography(pts, dst)
        s = 3.7
        smat = np.diag([s, s, 1.0])
        h2 = estimate_homography(pts * s, dst * s)
        expected = smat @ h1 @ np.linalg.inv(smat)
        expected /= expected[2, 2]
        np.testing.assert_allclose(h2, expected, atol=1e-9)

    def test_collinear_degenerate(self):
        t = np.linspace(0.0, 1.0, 20)
        line = np.column_stack([t * 50, t * 30 + 2])
        with pytest.raises(DegenerateGeometryError):
            estimate_homography(line, line * 2.0)


class TestWarp:
    def test_identity_bit_exact(self, rng):
        img = rng.random((20, 24, 3))
        out = warp(img, np.eye(3), (20, 24))
        assert out.tobytes() == img.tobytes()

    def test_integer_translation_exact(self, rng):
        img = rng.random((16, 16))
        h = np.array([[1.0, 0, 3.0], [0, 1.0, -2.0], [0, 0, 1.0]])
        out = warp(img, h, (16, 16))
        np.testing.assert_array_equal(out[:14, 3:], img[2:, : 16 - 3])
        assert np.all(out[:, :3] == 0.0) and np.all(out[14:, :] == 0.0)

    def test_roundtrip_interior(self):
        img = smooth_ref(96, 96)
        h = rotation_h(7.0, 47.5, 47.5)
        back = warp(warp(img, h, (96, 96), fill="black"), np.linalg.inv(h), (96, 96))
        from demoire.metrics import psnr

        margin = 12  # rotation pulls black fill a few pixels inside the corner
        assert psnr(back[margin:-margin, margin:-margin], img[margin:-margin, margin:-margin]) > 35.0

    def test_edge_fill_replicates_border(self):
        img = np.ones((8, 8)) * 0.7
        h = np.array([[1.0, 0, 4.0], [0, 1.0, 0], [0, 0, 1.0]])
        out = warp(img, h, (8, 8), fill="edge")
        assert np.all(out == 0.7)

    def test_singular_rejected(self):
        with pytest.raises(DegenerateGeometryError):
            warp(np.zeros((4, 4)), np.zeros((3, 3)), (4, 4))

    def test_bad_fill_name(self):
        with pytest.raises(ConfigError):
            warp(np.zeros((4, 4)), np.eye(3), (4, 4), fill="mirror")


class TestIntensity:
    def test_equal_means_unchanged(self, rng):
        a = rng.random((12, 12, 3)) * 0.5 + 0.25
        np.testing.assert_allclose(correct_intensity(a, a.copy()), a, atol=1e-12)

    def test_closed_form_shift(self):
        src = np.full((10, 10, 3), 0.4)
        ref = np.full((10, 10, 3), 0.5)
        np.testing.assert_allclose(correct_intensity(src, ref), 0.5, atol=1e-12)

    def test_channel_means_align(self, rng):
        src = rng.random((20, 20, 3)) * 0.4 + 0.3
        ref = rng.random((20, 20, 3)) * 0.4 + 0.2
        out = correct_intensity(src, ref)
        np.testing.assert_allclose(out.mean(axis=(0, 1)), ref.mean(axis=(0, 1)), atol=1e-6)


class TestVerifyPair:
    def test_identical_accepts(self):
        img = smooth_ref(32, 32)
        ok, value = verify_pair(img, img.copy())
        assert ok and value == 99.0

    def test_noise_rejects(self, rng):
        ref = smooth_ref(32, 32)
        noise = rng.random(ref.shape)
        ok, value = verify_pair(noise, ref)
        assert not ok and value < 12.0


class TestAlignPair:
    def test_recovers_warped_frame(self):
        ref = smooth_ref()
        frame, _ = synthesize_frame(ref, FrameSpec())
        h = rotation_h(6.0, 79.5, 79.5)
        h[2, 0] = 1.5e-4
        photo = np.clip(warp(frame, h, (160, 160), fill="black") + 0.03, 0.0, 1.0)
        result = align_pair(photo, ref, FrameSpec())
        assert isinstance(result, AlignResult)
        assert result.accepted
        assert result.psnr > 30.0
        assert result.residual < 0.5
        assert result.aligned.shape == ref.shape

    def test_contrast_scaled_capture_still_registers(self):
        # mean-shift correction cannot undo a contrast change, so the PSNR
        # bar drops but geometry must still lock on
        ref = smooth_ref()
        frame, _ = synthesize_frame(ref, FrameSpec())
        photo = np.clip(warp(frame, rotation_h(-9.0, 79.5, 79.5), (160, 160)) * 0.85 + 0.05, 0, 1)
        result = align_pair(photo, ref, FrameSpec())
        assert result.accepted and result.residual < 0.5

    def test_unalignable_photo_raises(self):
        with pytest.raises((DetectionError, CleaningError)):
            align_pair(np.ones((160, 160, 3)), smooth_ref(), FrameSpec())
