"""Synthetic watertight shapes standing in for scanned datasets.

Four families: `sphere` (subdivided icosahedron, vertices projected onto the
exact radius), `box` (12 triangles), `union2` (two overlapping spheres meshed
from their implicit union), and `capsule_figure` (torso plus four limbs with
seeded joint angles, meshed from the capsule-union field). All outputs are
watertight, consistently oriented outward, and fit inside the canonical
domain; the implicit shapes are additionally rescaled so their longest
bounding-box edge is exactly 1.
"""

import numpy as np

from ..kernels import marching_cubes_core
from .mesh import TriMesh, cleanup, normalize
from .sdf import capsule_sdf, sphere_sdf, union_sdf
from .voxel import cell_axis

KINDS = ("sphere", "box", "union2", "capsule_figure")


def icosphere(radius=0.4, subdiv=4):
    """Subdivided icosahedron; every vertex lies exactly on the sphere."""
    if radius <= 0 or not 0 <= subdiv <= 8:
        raise ValueError("need radius > 0 and 0 <= subdiv <= 8")
    phi = (1 + np.sqrt(5)) / 2
    v = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    v /= np.linalg.norm(v, axis=1)[:, None]
    for _ in range(subdiv):
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uedges, inv = np.unique(edges, axis=0, return_inverse=True)
        mids = v[uedges[:, 0]] + v[uedges[:, 1]]
        mids /= np.linalg.norm(mids, axis=1)[:, None]
        m01, m12, m20 = np.split(inv.reshape(3, -1) + len(v), 3)
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        f = np.concatenate([
            np.stack([a, m01[0], m20[0]], axis=1),
            np.stack([b, m12[0], m01[0]], axis=1),
            np.stack([c, m20[0], m12[0]], axis=1),
            np.stack([m01[0], m12[0], m20[0]], axis=1),
        ])
        v = np.concatenate([v, mids])
    return TriMesh(v * radius, f)


def box_mesh(extents=(1.0, 0.6, 0.35)):
    """Axis-aligned box with the given full edge lengths, centered at origin."""
    e = np.asarray(extents, dtype=np.float64)
    if e.min() <= 0:
        raise ValueError("box extents must be positive")
    if e.max() > 1.0 + 1e-12:
        raise ValueError("box must fit in the unit domain")
    h = e / 2
    v = np.array([[x, y, z] for x in (-h[0], h[0])
                  for y in (-h[1], h[1]) for z in (-h[2], h[2])])
    f = np.array([
        [0, 1, 3], [0, 3, 2],
        [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1],
        [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4],
        [1, 5, 7], [1, 7, 3],
    ], dtype=np.int64)
    mesh = TriMesh(v, f)
    if mesh.signed_volume() < 0:
        f = f[:, ::-1]
        mesh = TriMesh(v, f)
    return mesh


def capsule_mesh(a, b, radius, segments=48, rings=12):
    """Parametric capsule around segment a-b; error shrinks as 1/segments^2."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if radius <= 0 or segments < 3 or rings < 1:
        raise ValueError("bad capsule parameters")
    axis = b - a
    length = np.linalg.norm(axis)
    # profile in local coords: z in [0, length], poles capped by hemispheres
    ang = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    circ = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    # profile rows (ring radius, z): bottom hemisphere up to the equator at
    # z=0, cylinder wall to z=length, mirrored top hemisphere; poles separate
    lats = np.linspace(-np.pi / 2, 0, rings + 1)[1:]
    rows = [(radius * np.cos(t), radius * np.sin(t)) for t in lats]
    rows.append((radius, length))
    rows += [(radius * np.cos(t), length - radius * np.sin(t)) for t in lats[:-1][::-1]]
    verts = [np.array([0.0, 0.0, -radius])]
    for rr, zz in rows:
        ring = np.column_stack([circ * rr, np.full(segments, zz)])
        verts.append(ring)
    verts.append(np.array([0.0, 0.0, length + radius]))
    v = np.vstack([verts[0][None, :]] + verts[1:-1] + [verts[-1][None, :]])
    faces = []
    nrows = len(rows)
    for s in range(segments):
        sn = (s + 1) % segments
        faces.append([0, 1 + sn, 1 + s])  # bottom fan
        top0 = 1 + (nrows - 1) * segments
        faces.append([len(v) - 1, top0 + s, top0 + sn])
    for r in range(nrows - 1):
        r0, r1 = 1 + r * segments, 1 + (r + 1) * segments
        for s in range(segments):
            sn = (s + 1) % segments
            faces.append([r0 + s, r0 + sn, r1 + sn])
            faces.append([r0 + s, r1 + sn, r1 + s])
    f = np.asarray(faces, dtype=np.int64)
    # rotate local +z onto the segment direction, then translate to a
    if length > 0:
        z = axis / length
    else:
        z = np.array([0.0, 0.0, 1.0])
    helper = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.stack([x, y, z], axis=1)
    mesh = cleanup(v @ rot.T + a, f)
    if mesh.signed_volume() < 0:
        mesh = TriMesh(mesh.vertices, mesh.faces[:, ::-1])
    return mesh


def sdf_mesh(sdf, res=96):
    """Mesh the zero crossing of a positive-inside field sampled at res^3."""
    ax = cell_axis(res)
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    field = sdf(np.stack([x, y, z], axis=-1))
    if field.max() <= 0:
        raise ValueError("field is empty inside the domain")
    if (field[0].max() > 0 or field[-1].max() > 0 or field[:, 0].max() > 0
            or field[:, -1].max() > 0 or field[:, :, 0].max() > 0
            or field[:, :, -1].max() > 0):
        raise ValueError("shape touches the sampling boundary")
    verts, faces = marching_cubes_core(field, 0.0)
    return TriMesh(-0.5 + (verts + 0.5) / res, faces)


def figure_segments(angles=None, seed=0, max_angle=90.0):
    """Capsule segments (a, b, radius) of the stick figure.

    angles: 8 joint angles in degrees (2 per limb: swing toward +-x, swing
    toward +-z), or None to draw them from the seed. All zeros gives a
    bilaterally symmetric figure.
    """
    if angles is None:
        rng = np.random.default_rng(seed)
        angles = rng.uniform(-60.0, 60.0, 8)
    angles = np.asarray(angles, dtype=np.float64)
    if angles.shape != (8,):
        raise ValueError("need 8 joint angles")
    if np.abs(angles).max() > max_angle:
        raise ValueError(f"joint angles must stay within +-{max_angle} degrees")
    segs = [(np.array([0.0, -0.16, 0.0]), np.array([0.0, 0.20, 0.0]), 0.10)]
    anchors = [
        (np.array([0.10, 0.14, 0.0]), 0.22, 0.05),    # right arm
        (np.array([-0.10, 0.14, 0.0]), 0.22, 0.05),   # left arm
        (np.array([0.06, -0.16, 0.0]), 0.26, 0.055),  # right leg
        (np.array([-0.06, -0.16, 0.0]), 0.26, 0.055), # left leg
    ]
    mirror = np.array([1.0, -1.0, 1.0, -1.0])
    for limb, (root, length, radius) in enumerate(anchors):
        al = np.deg2rad(angles[2 * limb]) * mirror[limb]
        az = np.deg2rad(angles[2 * limb + 1])
        d = np.array([np.sin(al) * np.cos(az) * mirror[limb],
                      -np.cos(al) * np.cos(az),
                      np.sin(az)])
        segs.append((root, root + length * d, radius))
    return segs


def gen_capsule_figure(params=None, seed=0, res=128):
    """Stick-figure mesh plus its capsule segments in mesh coordinates."""
    params = dict(params or {})
    segs = figure_segments(params.pop("angles", None), seed=seed,
                           max_angle=float(params.pop("max_angle", 90.0)))
    if params:
        raise ValueError(f"unknown capsule_figure params: {sorted(params)}")
    sdf = union_sdf(*[lambda p, s=s: capsule_sdf(p, s[0], s[1], s[2]) for s in segs])
    mesh, tf = normalize(sdf_mesh(sdf, res=res))
    segs = [(tf.apply(a), tf.apply(b), r * tf.scale) for a, b, r in segs]
    return mesh, segs


def gen_synthetic(kind, params=None, seed=0):
    """Watertight, canonically-placed mesh of the requested family."""
    params = dict(params or {})
    if kind == "sphere":
        mesh = icosphere(radius=float(params.pop("radius", 0.4)),
                         subdiv=int(params.pop("subdiv", 4)))
    elif kind == "box":
        mesh = box_mesh(extents=params.pop("extents", (1.0, 0.6, 0.35)))
    elif kind == "union2":
        r1 = float(params.pop("radius1", 0.22))
        r2 = float(params.pop("radius2", 0.30))
        off = float(params.pop("offset", 0.33))
        if min(r1, r2) <= 0 or off < 0 or off >= r1 + r2:
            raise ValueError("union2 spheres must overlap")
        res = int(params.pop("res", 96))
        sdf = union_sdf(lambda p: sphere_sdf(p, r1, (-off / 2, 0, 0)),
                        lambda p: sphere_sdf(p, r2, (off / 2, 0, 0)))
        mesh, _ = normalize(sdf_mesh(sdf, res=res))
    elif kind == "capsule_figure":
        res = int(params.pop("res", 128))
        mesh, _ = gen_capsule_figure(params, seed=seed, res=res)
        params = {}
    else:
        raise ValueError(f"unknown shape kind {kind!r} (expected one of {KINDS})")
    if params:
        raise ValueError(f"unknown params for {kind}: {sorted(params)}")
    return mesh
