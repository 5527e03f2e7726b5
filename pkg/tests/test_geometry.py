import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenesynth import geometry as g


K64 = g.CameraIntrinsics(32.0, 32.0, 32.0, 32.0, 64, 64)


def checker_image(h=64, w=64, period=8):
    uu, vv = np.meshgrid(np.arange(w), np.arange(h))
    c = ((uu // period) + (vv // period)) % 2
    img = np.zeros((h, w, 3))
    img[..., 0] = np.where(c, 200 / 255, 40 / 255)
    img[..., 1] = 120 / 255
    img[..., 2] = np.where(c, 30 / 255, 220 / 255)
    return img


def full_depth(value, h=64, w=64):
    return g.DepthMap(np.full((h, w), float(value)), np.ones((h, w), bool))


class TestUnproject:
    def test_principal_point_ray(self):
        img = np.full((64, 64, 3), 0.5)
        cloud = g.unproject(img, full_depth(2.0), K64, g.Pose.identity())
        np.testing.assert_allclose(cloud.positions[32 * 64 + 32], [0.0, 0.0, 2.0])

    def test_off_center_pixel(self):
        img = np.full((64, 64, 3), 0.5)
        cloud = g.unproject(img, full_depth(2.0), K64, g.Pose.identity())
        np.testing.assert_allclose(cloud.positions[32 * 64 + 48], [1.0, 0.0, 2.0])

    def test_dimension_mismatch(self):
        img = np.zeros((32, 64, 3))
        with pytest.raises(ValueError):
            g.unproject(img, full_depth(1.0), K64, g.Pose.identity())

    def test_nonpositive_depth_rejected(self):
        vals = np.full((4, 4), 1.0)
        vals[0, 0] = 0.0
        with pytest.raises(ValueError):
            g.DepthMap(vals, np.ones((4, 4), bool))
        # invalid pixels may hold anything
        ok = g.DepthMap(vals, ~np.eye(4, dtype=bool) & np.ones((4, 4), bool))
        assert not ok.valid[0, 0]

    def test_pixel_mask_subset(self):
        img = np.full((64, 64, 3), 0.25)
        mask = np.zeros((64, 64), bool)
        mask[3, 5] = True
        cloud = g.unproject(img, full_depth(1.5), K64, g.Pose.identity(), pixel_mask=mask)
        assert len(cloud) == 1


class TestSplat:
    def test_single_point_at_pixel_center(self):
        cloud = g.PointCloud(
            np.array([[0, 0, 2.0]], np.float32),
            np.array([[1.0, 0.0, 0.0]]),
            np.array([0], np.uint16),
        )
        res = g.splat_render(cloud, K64, g.Pose.identity())
        np.testing.assert_allclose(res.image[32, 32], [1.0, 0.0, 0.0])
        assert res.coverage[32, 32] == pytest.approx(1.0)

    def test_depth_order_wins_over_insertion_order(self):
        pos = np.array([[0, 0, 1.0], [0, 0, 2.0]], np.float32)
        col = np.array([[1.0, 0, 0], [0, 0, 1.0]])
        src = np.zeros(2, np.uint16)
        front = g.splat_render(g.PointCloud(pos, col, src), K64, g.Pose.identity())
        back = g.splat_render(g.PointCloud(pos[::-1], col[::-1], src), K64, g.Pose.identity())
        # red sits in front of blue either way
        assert front.image[32, 32, 0] > front.image[32, 32, 2]
        np.testing.assert_array_equal(front.image, back.image)

    def test_insertion_permutation_invariance(self):
        rng = np.random.default_rng(7)
        n = 200
        pos = np.stack(
            [rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), rng.uniform(1.0, 4.0, n)], 1
        ).astype(np.float32)
        col = g.snap_colors(rng.uniform(0, 1, (n, 3)))
        cloud = g.PointCloud(pos, col, np.zeros(n, np.uint16))
        perm = rng.permutation(n)
        shuffled = g.PointCloud(pos[perm], col[perm], np.zeros(n, np.uint16))
        a = g.splat_render(cloud, K64, g.Pose.identity())
        b = g.splat_render(shuffled, K64, g.Pose.identity())
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.coverage, b.coverage)
        np.testing.assert_array_equal(a.depth, b.depth)

    def test_empty_cloud_renders_blank(self):
        res = g.splat_render(g.PointCloud.empty(), K64, g.Pose.identity())
        assert res.coverage.max() == 0.0
        assert res.image.max() == 0.0
        assert not res.visible.any()

    def test_points_behind_camera_discarded(self):
        cloud = g.PointCloud(
            np.array([[0, 0, -1.0], [0, 0, 0.0]], np.float32),
            np.full((2, 3), 0.5),
            np.zeros(2, np.uint16),
        )
        res = g.splat_render(cloud, K64, g.Pose.identity())
        assert res.coverage.max() == 0.0

    def test_round_trip_frontal_wall_is_exact(self):
        img = checker_image()
        cloud = g.unproject(img, full_depth(5.0), K64, g.Pose.identity())
        res = g.splat_render(cloud, K64, g.Pose.identity())
        confident = res.coverage >= 0.99
        assert confident.all()
        np.testing.assert_array_equal(res.image[confident], g.snap_colors(img)[confident])

    def test_slanted_interior_stays_below_confidence_gate(self):
        # depth varies per column: the 8 nearest-in-depth candidates exclude
        # the exact hit, which must keep coverage under the 0.99 gate away
        # from the image border
        uu = np.meshgrid(np.arange(64), np.arange(64))[0]
        xs = (uu - 32.0) / 32.0
        d = np.where(xs > 0.3, 3.0 / np.maximum(xs, 1e-9), 1.0)
        valid = (xs > 0.3) & (d < 20)
        cloud = g.unproject(checker_image(), g.DepthMap(d, valid), K64, g.Pose.identity())
        res = g.splat_render(cloud, K64, g.Pose.identity())
        interior = valid.copy()
        interior[:5] = interior[-5:] = False
        interior[:, :46] = interior[:, 60:] = False
        below = res.coverage[interior] < 0.99
        assert below.mean() > 0.5
        assert res.coverage[interior].min() == pytest.approx(0.98867, abs=1e-4)

    @settings(max_examples=20, deadline=None)
    @given(
        du=st.integers(-5, 5),
        dv=st.integers(-5, 5),
        seed=st.integers(0, 2**31 - 1),
    )
    def test_translation_equivariance(self, du, dv, seed):
        rng = np.random.default_rng(seed)
        n = 60
        pos = np.stack(
            [rng.uniform(-0.8, 0.8, n), rng.uniform(-0.8, 0.8, n), rng.uniform(1.0, 3.0, n)],
            axis=1,
        ).astype(np.float32)
        col = g.snap_colors(rng.uniform(0, 1, (n, 3)))
        cloud = g.PointCloud(pos, col, np.zeros(n, np.uint16))
        k1 = g.CameraIntrinsics(24.0, 24.0, 23.5, 24.25, 48, 48)
        k2 = g.CameraIntrinsics(24.0, 24.0, 23.5 + du, 24.25 + dv, 48, 48)
        a = g.splat_render(cloud, k1, g.Pose.identity())
        b = g.splat_render(cloud, k2, g.Pose.identity())
        us = np.arange(48)
        uok = us[(us + du >= 0) & (us + du < 48)]
        vok = us[(us + dv >= 0) & (us + dv < 48)]
        np.testing.assert_array_equal(
            a.image[np.ix_(vok, uok)], b.image[np.ix_(vok + dv, uok + du)]
        )
        np.testing.assert_array_equal(
            a.coverage[np.ix_(vok, uok)], b.coverage[np.ix_(vok + dv, uok + du)]
        )
        np.testing.assert_array_equal(
            a.depth[np.ix_(vok, uok)], b.depth[np.ix_(vok + dv, uok + du)]
        )


class TestTrim:
    def test_full_mask_erodes_boundary(self):
        res = g.RenderResult(
            np.ones((8, 8, 3)), np.ones((8, 8)), np.ones((8, 8), bool), np.ones((8, 8))
        )
        t = g.trim_border(res, 0.5, 1)
        expect = np.zeros((8, 8), bool)
        expect[1:-1, 1:-1] = True
        np.testing.assert_array_equal(t.visible, expect)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        cov = rng.uniform(0, 1, (16, 16))
        res = g.RenderResult(rng.uniform(0, 1, (16, 16, 3)), cov, cov > 0, rng.uniform(1, 2, (16, 16)))
        once = g.trim_border(res, 0.5, 2)
        twice = g.trim_border(once, 0.5, 2)
        np.testing.assert_array_equal(once.visible, twice.visible)
        np.testing.assert_array_equal(once.image, twice.image)
        np.testing.assert_array_equal(once.depth, twice.depth)

    def test_zeroes_hidden_pixels(self):
        cov = np.zeros((6, 6))
        cov[2:5, 2:5] = 1.0
        res = g.RenderResult(np.ones((6, 6, 3)), cov, cov > 0, np.ones((6, 6)))
        t = g.trim_border(res, 0.5, 0)
        assert t.image[0, 0].max() == 0.0
        assert t.image[3, 3].min() == 1.0
        np.testing.assert_array_equal(t.coverage, cov)


def rotation_strategy():
    angles = st.floats(-60.0, 60.0, allow_nan=False)
    return st.tuples(angles, angles).map(lambda a: g.look_rotation(a[0], a[1]))


class TestHomography:
    def test_identity(self):
        np.testing.assert_allclose(
            g.rotation_homography(K64, np.eye(3)), np.eye(3), atol=1e-12
        )

    @settings(max_examples=50, deadline=None)
    @given(r1=rotation_strategy(), r2=rotation_strategy())
    def test_composition(self, r1, r2):
        h1 = g.rotation_homography(K64, r1)
        h2 = g.rotation_homography(K64, r2)
        h12 = g.rotation_homography(K64, r2 @ r1)
        hc = h2 @ h1
        hc /= hc[2, 2]
        assert np.abs(hc - h12).max() < 1e-9

    def test_rejects_non_orthonormal(self):
        bad = np.eye(3)
        bad[0, 1] = 1e-3
        with pytest.raises(ValueError):
            g.rotation_homography(K64, bad)


class TestPose:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            g.Pose(np.eye(3) * 1.001, np.zeros(3))

    @settings(max_examples=50, deadline=None)
    @given(r=rotation_strategy(), t=st.lists(st.floats(-2, 2), min_size=3, max_size=3))
    def test_compose_with_inverse_is_identity(self, r, t):
        p = g.Pose(r, np.array(t))
        ident = g.compose_pose(p, g.invert_pose(p))
        assert np.abs(ident.rotation - np.eye(3)).max() < 1e-12
        assert np.abs(ident.translation).max() < 1e-12

    def test_compose_applies_right_then_left(self):
        a = g.Pose(g.look_rotation(90, 0), np.array([1.0, 0, 0]))
        b = g.Pose(np.eye(3), np.array([0, 0, 2.0]))
        c = g.compose_pose(a, b)
        # b's forward offset is rotated by a's yaw before a's translation
        np.testing.assert_allclose(c.translation, [3.0, 0.0, 0.0], atol=1e-12)


class TestPointCloudIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        n = 57
        cloud = g.PointCloud(
            rng.normal(size=(n, 3)).astype(np.float32),
            g.snap_colors(rng.uniform(0, 1, (n, 3))),
            rng.integers(0, 5, n).astype(np.uint16),
        )
        path = tmp_path / "cloud.pspc"
        g.write_point_cloud(path, cloud)
        back = g.read_point_cloud(path)
        np.testing.assert_array_equal(back.positions, cloud.positions)
        np.testing.assert_array_equal(back.colors, cloud.colors)
        np.testing.assert_array_equal(back.source, cloud.source)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.pspc"
        path.write_bytes(b"NOPE" + b"\0" * 16)
        with pytest.raises(ValueError):
            g.read_point_cloud(path)

    def test_layout(self, tmp_path):
        cloud = g.PointCloud(
            np.zeros((2, 3), np.float32), np.zeros((2, 3)), np.zeros(2, np.uint16)
        )
        path = tmp_path / "two.pspc"
        g.write_point_cloud(path, cloud)
        raw = path.read_bytes()
        assert raw[:4] == b"PSPC"
        assert len(raw) == 4 + 8 + 2 * 17
