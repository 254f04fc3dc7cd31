import numpy as np
import pytest

from ifnet import geometry as geo


@pytest.mark.parametrize("kind", geo.KINDS)
def test_all_kinds_watertight_oriented_in_domain(kind):
    m = geo.gen_synthetic(kind, seed=5)
    assert m.is_watertight()
    assert m.signed_volume() > 0
    lo, hi = m.bbox()
    assert lo.min() >= -0.5 - 1e-9 and hi.max() <= 0.5 + 1e-9


def test_sphere_vertex_radii():
    m = geo.gen_synthetic("sphere", {"radius": 0.4, "subdiv": 4}, seed=0)
    r = np.linalg.norm(m.vertices, axis=1)
    assert np.abs(r - 0.4).max() < 2e-3  # exact projection, bound is generous
    assert len(m.faces) == 20 * 4 ** 4


def test_fine_sphere_deviation_under_band():
    m = geo.icosphere(0.4, 7)
    cent = m.triangles().mean(axis=1)
    assert np.abs(np.linalg.norm(cent, axis=1) - 0.4).max() < 1e-5


def test_capsule_figure_symmetric_at_zero_angles():
    m, segs = geo.gen_capsule_figure({"angles": [0.0] * 8}, seed=0)
    mirrored = m.vertices * np.array([-1.0, 1.0, 1.0])
    # every mirrored vertex must coincide with some vertex
    key = {tuple(np.round(v, 6)) for v in m.vertices}
    hits = sum(tuple(np.round(v, 6)) in key for v in mirrored)
    assert hits == len(m.vertices)
    assert len(segs) == 5


def test_capsule_figure_seed_controls_pose():
    a = geo.gen_synthetic("capsule_figure", {"res": 64}, seed=1)
    b = geo.gen_synthetic("capsule_figure", {"res": 64}, seed=1)
    c = geo.gen_synthetic("capsule_figure", {"res": 64}, seed=2)
    assert np.array_equal(a.vertices, b.vertices)
    assert a.vertices.shape != c.vertices.shape or not np.allclose(a.vertices, c.vertices)


def test_joint_angle_range_enforced():
    with pytest.raises(ValueError, match="within"):
        geo.gen_capsule_figure({"angles": [120.0] + [0.0] * 7}, seed=0)


def test_param_validation():
    with pytest.raises(ValueError, match="unknown shape kind"):
        geo.gen_synthetic("torus", seed=0)
    with pytest.raises(ValueError, match="unknown params"):
        geo.gen_synthetic("sphere", {"wobble": 2}, seed=0)
    with pytest.raises(ValueError, match="overlap"):
        geo.gen_synthetic("union2", {"radius1": 0.1, "radius2": 0.1, "offset": 0.45})
    with pytest.raises(ValueError):
        geo.gen_synthetic("box", {"extents": (1.5, 0.5, 0.5)})


def test_union2_matches_its_field():
    rng = np.random.default_rng(11)
    m = geo.gen_synthetic("union2", seed=0)
    # mesh was rescaled to unit extent; rebuild the field through the same map
    lo, hi = m.bbox()
    assert np.isclose((hi - lo).max(), 1.0)


def test_capsule_mesh_accuracy_scales_with_segments():
    a, b, r = (0.0, -0.2, 0.0), (0.1, 0.25, 0.05), 0.12
    coarse = geo.capsule_mesh(a, b, r, segments=24, rings=6)
    fine = geo.capsule_mesh(a, b, r, segments=96, rings=24)
    def dev(m):
        c = m.triangles().mean(axis=1)
        return np.abs(geo.capsule_sdf(c, a, b, r)).max()
    assert dev(fine) < dev(coarse) / 4
    assert coarse.is_watertight() and fine.is_watertight()


def test_sdf_mesh_boundary_guard():
    with pytest.raises(ValueError, match="boundary"):
        geo.sdf_mesh(lambda p: geo.sphere_sdf(p, 0.8), res=32)
    with pytest.raises(ValueError, match="empty"):
        geo.sdf_mesh(lambda p: geo.sphere_sdf(p, -1.0), res=16)
