import numpy as np
import pytest

from ifnet import geometry as geo


def test_voxel_file_layout(tmp_path):
    # x must vary fastest in the serialized byte stream
    data = np.zeros((2, 2, 2), dtype=np.uint8)
    data[1, 0, 0] = 1  # x=1
    data[0, 1, 0] = 1  # y=1
    p = tmp_path / "g.ifvx"
    geo.save_voxels(p, geo.VoxelGrid(data))
    raw = p.read_bytes()
    assert raw[:4] == b"IFVX"
    body = raw[12:]
    assert len(body) == 8
    # linear index = (z*2 + y)*2 + x
    assert body[1] == 1  # (0,0,1) -> x=1,y=0,z=0
    assert body[2] == 1  # (0,1,0) -> y=1
    back = geo.load_voxels(p)
    assert np.array_equal(back.data, data)


def test_voxel_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    g = geo.VoxelGrid((rng.random((9, 9, 9)) < 0.3).astype(np.uint8))
    p = tmp_path / "g.ifvx"
    geo.save_voxels(p, g)
    assert np.array_equal(geo.load_voxels(p).data, g.data)


def test_voxel_file_errors(tmp_path):
    p = tmp_path / "bad.ifvx"
    p.write_bytes(b"XXXX" + b"\x00" * 8)
    with pytest.raises(ValueError, match="not a voxel grid"):
        geo.load_voxels(p)
    import struct
    p.write_bytes(b"IFVX" + struct.pack("<II", 1, 4) + b"\x00" * 10)
    with pytest.raises(ValueError, match="truncated"):
        geo.load_voxels(p)


def test_voxel_grid_validation():
    with pytest.raises(ValueError):
        geo.VoxelGrid(np.zeros((2, 2, 3), dtype=np.uint8))
    with pytest.raises(ValueError):
        geo.VoxelGrid(np.zeros((1, 1, 1), dtype=np.uint8))
    with pytest.raises(ValueError):
        geo.VoxelGrid(np.full((2, 2, 2), 2, dtype=np.uint8))


class TestVoxelizePoints:
    def test_origin_tie_rule(self):
        g = geo.voxelize_points(np.zeros((1, 3)), 2)
        assert g.count() == 1
        assert g.data[1, 1, 1] == 1

    def test_matches_brute_force_binning(self):
        rng = np.random.default_rng(7)
        d = rng.standard_normal((3000, 3))
        pts = 0.4 * d / np.linalg.norm(d, axis=1)[:, None]
        g = geo.voxelize_points(pts, 32)
        ref = np.zeros((32, 32, 32), dtype=np.uint8)
        for p in pts:
            i, j, k = (int(np.floor((c + 0.5) * 32)) for c in p)
            ref[min(i, 31), min(j, 31), min(k, 31)] = 1
        assert np.array_equal(g.data, ref)

    def test_empty_cloud(self):
        assert geo.voxelize_points(np.zeros((0, 3)), 8).count() == 0

    def test_boundary_clamped(self):
        g = geo.voxelize_points(np.array([[0.5, 0.5, 0.5], [-0.5, -0.5, -0.5]]), 4)
        assert g.data[3, 3, 3] == 1 and g.data[0, 0, 0] == 1

    def test_monotone_under_addition(self):
        rng = np.random.default_rng(8)
        a = rng.uniform(-0.5, 0.5, (100, 3))
        b = rng.uniform(-0.5, 0.5, (100, 3))
        ga = geo.voxelize_points(a, 16).data
        gab = geo.voxelize_points(np.vstack([a, b]), 16).data
        assert np.all(gab >= ga)


class TestVoxelizeMesh:
    def test_sphere_against_analytic_centers(self):
        mesh = geo.icosphere(0.4, 6)
        g = geo.voxelize_mesh(mesh, 32)
        sd = geo.sphere_sdf(g.cell_centers(), 0.4)
        far = np.abs(sd) > 1e-5  # exclude the tessellation band
        assert np.array_equal(g.data.reshape(-1)[far], (sd[far] > 0).astype(np.uint8))

    def test_tiny_mesh_single_cell(self):
        m = geo.icosphere(0.05, 2)
        g = geo.voxelize_mesh(m, 2)
        # no cell center of the 2-grid lies inside a radius-0.05 ball at origin
        assert g.count() == 0
        # cell centers of the 2-grid sit at radius ~0.433; 0.45 covers them
        g4 = geo.voxelize_mesh(geo.icosphere(0.45, 2), 2)
        assert g4.count() == 8

    def test_full_domain_cube(self):
        m = geo.box_mesh((1, 1, 1))
        g = geo.voxelize_mesh(m, 2)
        assert g.count() == 8
