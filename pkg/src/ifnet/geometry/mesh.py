"""Triangle meshes: container, OFF/OBJ I/O, cleanup, normalization, sampling.

Vertices live in float64 [V, 3] arrays, faces in int64 [F, 3]. Load-time
cleanup merges vertices closer than 1e-9 and drops zero-area faces, so
downstream code can rely on indexable, non-degenerate triangles.
"""

import os

import numpy as np

MERGE_EPS = 1e-9
# squared double-area below this counts as degenerate
_AREA2_EPS = 1e-28


class MeshFormatError(ValueError):
    def __init__(self, path, line_no, msg):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.line_no = line_no


class Transform:
    """Affine map v -> scale * v + translation (original to canonical)."""

    def __init__(self, scale, translation):
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.scale = float(scale)
        self.translation = np.asarray(translation, dtype=np.float64)

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) * self.scale + self.translation

    def invert(self, points):
        return (np.asarray(points, dtype=np.float64) - self.translation) / self.scale

    def __repr__(self):
        return f"Transform(scale={self.scale}, translation={tuple(self.translation)})"


class TriMesh:
    def __init__(self, vertices, faces):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError("vertices must be [V, 3]")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError("faces must be [F, 3]")
        if len(self.faces) and self.faces.max() >= len(self.vertices):
            raise ValueError("face index out of range")
        if len(self.faces) and self.faces.min() < 0:
            raise ValueError("negative face index")

    def __len__(self):
        return len(self.faces)

    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangles(self):
        return self.vertices[self.faces]

    def face_cross(self):
        t = self.triangles()
        return np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])

    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self):
        c = self.face_cross()
        n = np.linalg.norm(c, axis=1)
        n[n == 0] = 1.0
        return c / n[:, None]

    def edge_counts(self):
        """Occurrences of each undirected edge; watertight means all == 2."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                            self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_watertight(self):
        if len(self.faces) == 0:
            return False
        return bool(np.all(self.edge_counts() == 2))

    def signed_volume(self):
        t = self.triangles()
        return float(np.einsum("ij,ij->i", t[:, 0],
                               np.cross(t[:, 1], t[:, 2])).sum() / 6.0)


def cleanup(vertices, faces):
    """Merge near-duplicate vertices and drop degenerate faces."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if len(vertices):
        key = np.round(vertices / MERGE_EPS).astype(np.int64)
        _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
        order = np.argsort(first)  # keep first-occurrence order, not sort order
        rank = np.empty(len(order), dtype=np.int64)
        rank[order] = np.arange(len(order))
        vertices = vertices[first[order]]
        faces = rank[inv][faces] if len(faces) else faces
    keep = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) \
        & (faces[:, 0] != faces[:, 2]) if len(faces) else np.zeros(0, bool)
    faces = faces[keep]
    if len(faces):
        t = vertices[faces]
        c = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        faces = faces[(c * c).sum(axis=1) > _AREA2_EPS]
    return TriMesh(vertices, faces)


def normalize(mesh):
    """Center the bounding box at the origin, longest edge exactly 1."""
    if len(mesh.vertices) == 0:
        raise ValueError("cannot normalize an empty mesh")
    lo, hi = mesh.bbox()
    extent = (hi - lo).max()
    if extent <= 0:
        raise ValueError("mesh has zero extent")
    scale = 1.0 / extent
    translation = -scale * (lo + hi) / 2
    tf = Transform(scale, translation)
    return TriMesh(tf.apply(mesh.vertices), mesh.faces), tf


def sample_surface(mesh, count, seed):
    """Area-uniform surface samples with face normals, deterministic by seed.

    Returns (points [count, 3], normals [count, 3], face_index [count]).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if len(mesh.faces) == 0:
        raise ValueError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    fi = rng.choice(len(areas), size=count, p=areas / areas.sum())
    u = rng.random(count)
    v = rng.random(count)
    flip = u + v > 1
    u[flip] = 1 - u[flip]
    v[flip] = 1 - v[flip]
    t = mesh.vertices[mesh.faces[fi]]
    pts = t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) + v[:, None] * (t[:, 2] - t[:, 0])
    return pts, mesh.face_normals()[fi], fi


# ---------------------------------------------------------------------------
# file formats

def vertex_normals(mesh):
    """Per-vertex unit normals, area-weighted over incident faces.

    Vertices with no faces (or perfectly cancelling ones) keep a zero
    vector rather than blowing up.
    """
    cross = mesh.face_cross()  # length encodes 2*area, so this is the weighting
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], cross)
    norm = np.linalg.norm(acc, axis=1)
    safe = np.where(norm > 0.0, norm, 1.0)
    return acc / safe[:, None]


def save_mesh(path, mesh, normals=None):
    """Write OFF or OBJ by extension; normals only go into OBJ files."""
    path = os.fspath(path)
    if normals is not None:
        normals = np.asarray(normals, dtype=np.float64)
        if normals.shape != mesh.vertices.shape:
            raise ValueError("need one normal per vertex")
        if not path.endswith(".obj"):
            raise ValueError("normals are only written to OBJ files")
    if path.endswith(".obj"):
        _save_obj(path, mesh, normals)
    else:
        _save_off(path, mesh)


def load_mesh(path):
    path = os.fspath(path)
    if path.endswith(".obj"):
        v, f = _load_obj(path)
    else:
        v, f = _load_off(path)
    mesh = cleanup(v, f)
    if len(mesh.faces) == 0:
        raise ValueError(f"{path}: mesh has no usable faces")
    return mesh


def _save_off(path, mesh):
    with open(path, "w") as f:
        f.write("OFF\n")
        f.write(f"{len(mesh.vertices)} {len(mesh.faces)} 0\n")
        for v in mesh.vertices:
            f.write(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for a, b, c in mesh.faces:
            f.write(f"3 {a} {b} {c}\n")


def _load_off(path):
    with open(path) as f:
        lines = f.readlines()
    # skip blanks and comments, remember original line numbers for errors
    rows = [(i + 1, ln.split("#")[0].strip()) for i, ln in enumerate(lines)]
    rows = [(n, ln) for n, ln in rows if ln]
    if not rows:
        raise MeshFormatError(path, 1, "empty file")
    pos = 0
    header = rows[pos][1]
    if header.startswith("OFF"):
        rest = header[3:].strip()
        pos += 1
    else:
        raise MeshFormatError(path, rows[pos][0], "missing OFF header")
    if rest:
        count_line, count_no = rest, rows[0][0]
    else:
        if pos >= len(rows):
            raise MeshFormatError(path, rows[-1][0], "missing count line")
        count_no, count_line = rows[pos]
        pos += 1
    parts = count_line.split()
    if len(parts) < 2:
        raise MeshFormatError(path, count_no, "count line needs vertex and face totals")
    try:
        nv, nf = int(parts[0]), int(parts[1])
    except ValueError:
        raise MeshFormatError(path, count_no, "counts must be integers") from None
    if len(rows) - pos < nv + nf:
        raise MeshFormatError(path, rows[-1][0], "file truncated")
    verts = np.empty((nv, 3))
    for i in range(nv):
        no, ln = rows[pos + i]
        parts = ln.split()
        if len(parts) < 3:
            raise MeshFormatError(path, no, "vertex needs 3 coordinates")
        try:
            verts[i] = [float(parts[0]), float(parts[1]), float(parts[2])]
        except ValueError:
            raise MeshFormatError(path, no, "bad vertex coordinate") from None
    pos += nv
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        no, ln = rows[pos + i]
        parts = ln.split()
        if not parts or parts[0] != "3" or len(parts) < 4:
            raise MeshFormatError(path, no, "only triangle faces supported")
        try:
            faces[i] = [int(parts[1]), int(parts[2]), int(parts[3])]
        except ValueError:
            raise MeshFormatError(path, no, "bad face index") from None
        if faces[i].min() < 0 or faces[i].max() >= nv:
            raise MeshFormatError(path, no, "face index out of range")
    return verts, faces


def _save_obj(path, mesh, normals=None):
    with open(path, "w") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        if normals is not None:
            for n in normals:
                f.write(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}\n")
            for a, b, c in mesh.faces:
                f.write(f"f {a + 1}//{a + 1} {b + 1}//{b + 1} {c + 1}//{c + 1}\n")
        else:
            for a, b, c in mesh.faces:
                f.write(f"f {a + 1} {b + 1} {c + 1}\n")


def _load_obj(path):
    verts, faces = [], []
    with open(path) as f:
        for no, raw in enumerate(f, start=1):
            ln = raw.split("#")[0].strip()
            if not ln:
                continue
            parts = ln.split()
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshFormatError(path, no, "vertex needs 3 coordinates")
                try:
                    verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError:
                    raise MeshFormatError(path, no, "bad vertex coordinate") from None
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise MeshFormatError(path, no, "only triangle faces supported")
                idx = []
                for p in parts[1:]:
                    head = p.split("/")[0]
                    try:
                        k = int(head)
                    except ValueError:
                        raise MeshFormatError(path, no, "bad face index") from None
                    if k == 0:
                        raise MeshFormatError(path, no, "face indices are 1-based")
                    idx.append(k - 1 if k > 0 else len(verts) + k)
                faces.append(idx)
            # other directives (vn, vt, o, g, usemtl ...) are ignored
    verts = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) and (faces.min() < 0 or faces.max() >= len(verts)):
        raise MeshFormatError(path, no, "face index out of range")
    return verts, faces
