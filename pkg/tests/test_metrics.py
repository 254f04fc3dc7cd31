import numpy as np
import pytest

from ifnet import geometry as geo
from ifnet import metrics as mt


def square_mesh(z, size=1.0):
    """Two triangles spanning [-s/2, s/2]^2 at height z (open surface)."""
    s = size / 2.0
    v = np.array([[-s, -s, z], [s, -s, z], [s, s, z], [-s, s, z]])
    return geo.TriMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


class TestKdTree:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1, 1, (1000, 3))
        tree = mt.KdTree(pts)
        queries = rng.uniform(-1.2, 1.2, (500, 3))
        idx, d2 = tree.query(queries)
        diff = queries[:, None, :] - pts[None, :, :]
        brute = np.einsum("qnd,qnd->qn", diff, diff)
        assert np.array_equal(idx, brute.argmin(axis=1))
        assert np.allclose(d2, brute.min(axis=1), rtol=0, atol=1e-12)

    def test_duplicate_tie_lowest_index(self):
        pts = np.zeros((8, 3))
        pts[3] = pts[6] = (0.5, 0.5, 0.5)
        idx, d2 = mt.KdTree(pts).query(np.array([[0.49, 0.5, 0.5]]))
        assert idx[0] == 3 and d2[0] == pytest.approx(1e-4)

    def test_normals_ride_along(self):
        pts = np.random.default_rng(1).uniform(-1, 1, (10, 3))
        nrm = np.tile([0.0, 0.0, 1.0], (10, 1))
        tree = mt.KdTree(pts, normals=nrm)
        assert np.array_equal(tree.normals, nrm)
        with pytest.raises(ValueError, match="pair"):
            mt.KdTree(pts, normals=nrm[:5])


class TestIoU:
    def test_identical_exactly_one(self):
        mesh = geo.icosphere(0.4, 3)
        assert mt.iou(mesh, mesh, n_points=5000, seed=1) == 1.0

    def test_disjoint_zero(self):
        a = geo.icosphere(0.1, 2)
        b = geo.TriMesh(a.vertices + np.array([0.3, 0.0, 0.0]), a.faces)
        c = geo.TriMesh(a.vertices - np.array([0.3, 0.0, 0.0]), a.faces)
        assert mt.iou(b, c, n_points=5000, seed=2) == 0.0

    def test_concentric_spheres_analytic(self):
        big = geo.icosphere(0.4, 4)
        small = geo.icosphere(0.32, 4)
        value = mt.iou(big, small, n_points=100000, seed=3)
        assert abs(value - 0.512) < 0.01

    def test_monotone_under_dilation(self):
        gt = geo.icosphere(0.4, 3)
        vals = [mt.iou(geo.icosphere(r, 3), gt, n_points=20000, seed=4)
                for r in (0.3, 0.35, 0.4)]
        assert vals[0] < vals[1] < vals[2]

    def test_non_watertight_rejected(self):
        mesh = geo.icosphere(0.3, 2)
        broken = geo.TriMesh(mesh.vertices, mesh.faces[:-1])
        with pytest.raises(geo.NonWatertightError):
            mt.iou(broken, mesh, n_points=100)

    def test_degenerate_denominator(self):
        # specks far apart: the expanded union box is all empty space
        a = geo.icosphere(0.01, 1)
        b = geo.TriMesh(a.vertices + np.array([0.8, 0.0, 0.0]), a.faces)
        with pytest.raises(ValueError, match="IoU undefined"):
            mt.iou(a, b, n_points=20, seed=5)


class TestChamfer:
    def test_identical_paired(self):
        mesh = geo.icosphere(0.4, 3)
        assert mt.chamfer_l2(mesh, mesh, n_points=2000, seed=6) <= 1e-12

    def test_parallel_squares(self):
        eps = 0.05
        value = mt.chamfer_l2(square_mesh(0.0), square_mesh(eps),
                              n_points=100000, seed=7)
        assert abs(value - eps ** 2) / eps ** 2 < 0.05

    def test_concentric_spheres(self):
        value = mt.chamfer_l2(geo.icosphere(0.4, 4), geo.icosphere(0.39, 4),
                              n_points=100000, seed=8)
        assert abs(value - 1e-4) / 1e-4 < 0.10

    def test_symmetry(self):
        a = geo.icosphere(0.35, 3)
        b = geo.box_mesh((0.8, 0.5, 0.4))
        assert mt.chamfer_l2(a, b, 3000, seed=9) == \
            mt.chamfer_l2(b, a, 3000, seed=9)

    def test_empty_rejected(self):
        empty = geo.TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
        with pytest.raises(ValueError, match="empty"):
            mt.chamfer_l2(empty, geo.icosphere(0.3, 1), 100)


class TestNormalConsistency:
    def test_identical_is_one(self):
        mesh = geo.icosphere(0.4, 3)
        assert abs(mt.normal_consistency(mesh, mesh, 2000, seed=10) - 1.0) < 1e-9

    def test_concentric_spheres_near_one(self):
        value = mt.normal_consistency(geo.icosphere(0.4, 4),
                                      geo.icosphere(0.35, 4), 20000, seed=11)
        assert value > 0.999 - 1e-3

    def test_rotated_cube_matches_brute_force(self):
        cube = geo.box_mesh((0.6, 0.6, 0.6))
        c, s = np.cos(np.pi / 4), np.sin(np.pi / 4)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        turned = geo.TriMesh(cube.vertices @ rot.T, cube.faces)
        n = 2000
        value = mt.normal_consistency(cube, turned, n, seed=12)

        pa, na, _ = geo.sample_surface(cube, n, 12)
        pb, nb, _ = geo.sample_surface(turned, n, 12)
        d = np.einsum("and,and->an",
                      pa[:, None, :] - pb[None, :, :],
                      pa[:, None, :] - pb[None, :, :])
        ref_ab = np.abs(np.einsum("ij,ij->i", na, nb[d.argmin(axis=1)])).mean()
        ref_ba = np.abs(np.einsum("ij,ij->i", nb, na[d.argmin(axis=0)])).mean()
        assert value == pytest.approx((ref_ab + ref_ba) / 2, abs=1e-12)
        # lateral faces dominated by the 45 degree mismatch
        assert 0.6 < value < 0.95


class TestEvaluate:
    def test_self_evaluation(self):
        mesh = geo.icosphere(0.4, 3)
        rep = mt.evaluate(mesh, mesh, n_points=3000, seed=13)
        assert rep.iou == 1.0
        assert rep.chamfer_l2 <= 1e-12
        assert rep.normal_consistency >= 0.999

    def test_deterministic(self):
        a = geo.icosphere(0.4, 3)
        b = geo.box_mesh((0.7, 0.7, 0.7))
        assert mt.evaluate(a, b, 2000, seed=14) == mt.evaluate(a, b, 2000, seed=14)

    def test_csv_and_table(self):
        rep = mt.MetricReport(0.75, 0.000125, 0.9312, 1000, 42)
        row = rep.csv_row().split(",")
        assert float(row[0]) == 0.75 and row[3] == "1000" and row[4] == "42"
        assert "x1e-2" in rep.table()
        assert "0.0125" in rep.table()

    def test_report_requires_finite(self):
        with pytest.raises(ValueError):
            mt.MetricReport(np.nan, 0.0, 1.0, 10, 0)
