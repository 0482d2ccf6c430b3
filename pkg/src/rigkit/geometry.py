"""Mesh geometry: OBJ I/O, surface sampling, ray casting, pinhole cameras.

Everything here is exact-arithmetic numpy at float64; ray queries run
against all triangles (desk-scale meshes make an acceleration structure
unnecessary) and intersection bookkeeping merges duplicate hits where a
ray threads a shared edge or vertex.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Mesh, SkinWeights

RAY_T_EPS = 1e-9
RAY_MERGE_EPS = 1e-9
_BARY_EPS = 1e-12
CAMERA_Z_EPS = 1e-9


class ObjParseError(ValueError):
    """OBJ syntax error carrying a 1-based line and column."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


# ---------------------------------------------------------------------------
# Wavefront OBJ
# ---------------------------------------------------------------------------


def _token_col(line: str, index: int) -> int:
    col = 1
    count = 0
    i = 0
    while i < len(line):
        if line[i].isspace():
            i += 1
            continue
        if count == index:
            return i + 1
        while i < len(line) and not line[i].isspace():
            i += 1
        count += 1
    return col


def parse_obj(text: str | bytes) -> Mesh:
    """Parse v/vn/f records; polygons are fan-triangulated.

    Indices are 1-based; negative indices count back from the vertices
    defined so far.  Errors carry the offending line and column.  Normals
    are kept only when they pair 1:1 with vertices.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    vertices: list[list[float]] = []
    normals: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    face_locs: list[tuple[int, int]] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        parts = line.split()
        if not parts:
            continue
        rec, args = parts[0], parts[1:]
        if rec == "v":
            if len(args) < 3:
                raise ObjParseError("vertex needs 3 coordinates", lineno, 1)
            coords = []
            for i, a in enumerate(args[:3]):
                try:
                    coords.append(float(a))
                except ValueError:
                    raise ObjParseError(
                        f"bad coordinate {a!r}", lineno, _token_col(raw, i + 1)
                    ) from None
            vertices.append(coords)
        elif rec == "vn":
            if len(args) < 3:
                raise ObjParseError("normal needs 3 components", lineno, 1)
            try:
                normals.append([float(a) for a in args[:3]])
            except ValueError as e:
                raise ObjParseError(str(e), lineno, 1) from None
        elif rec == "f":
            if len(args) < 3:
                raise ObjParseError(
                    f"face needs at least 3 vertices, got {len(args)}", lineno, 1
                )
            idx = []
            for i, a in enumerate(args):
                field = a.split("/")[0]
                try:
                    value = int(field)
                except ValueError:
                    raise ObjParseError(
                        f"bad vertex index {a!r}", lineno, _token_col(raw, i + 1)
                    ) from None
                if value == 0:
                    raise ObjParseError(
                        "vertex index 0 is not allowed", lineno, _token_col(raw, i + 1)
                    )
                if value < 0:
                    value = len(vertices) + value
                    if value < 0:
                        raise ObjParseError(
                            f"negative index {a!r} reaches before first vertex",
                            lineno,
                            _token_col(raw, i + 1),
                        )
                    idx.append(value)
                else:
                    idx.append(value - 1)
            for i in range(1, len(idx) - 1):
                faces.append((idx[0], idx[i], idx[i + 1]))
                face_locs.append((lineno, 1))
        # other record types (vt, o, g, s, usemtl, ...) are ignored

    if not vertices:
        raise ObjParseError("no vertices defined", 1, 1)
    for (a, b, c), (lineno, col) in zip(faces, face_locs):
        for value in (a, b, c):
            if value >= len(vertices):
                raise ObjParseError(
                    f"vertex index {value + 1} exceeds {len(vertices)} vertices",
                    lineno,
                    col,
                )
    mesh_normals = None
    if normals and len(normals) == len(vertices):
        mesh_normals = np.asarray(normals)
    return Mesh(
        np.asarray(vertices),
        np.asarray(faces, dtype=np.int64).reshape(-1, 3),
        mesh_normals,
    )


def load_obj(path: str | Path) -> Mesh:
    return parse_obj(Path(path).read_text())


def write_obj(mesh: Mesh) -> str:
    """Emit v/vn/f records with full round-trip float precision."""
    def row(tag, p):
        # repr of the Python float, not the numpy scalar
        return f"{tag} {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}"

    lines = [row("v", v) for v in mesh.vertices]
    if mesh.normals is not None:
        lines.extend(row("vn", n) for n in mesh.normals)
    lines.extend(
        f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}" for t in mesh.triangles
    )
    return "\n".join(lines) + "\n"


def save_obj(path: str | Path, mesh: Mesh) -> None:
    Path(path).write_text(write_obj(mesh))


# ---------------------------------------------------------------------------
# Surface sampling and attribute transfer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurfaceSamples:
    points: np.ndarray
    normals: np.ndarray
    triangles: np.ndarray  # source triangle per sample


def triangle_areas(mesh: Mesh) -> np.ndarray:
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def sample_surface(
    mesh: Mesh, n: int = 8192, seed: int | np.random.Generator = 0
) -> SurfaceSamples:
    """Area-weighted uniform samples with face normals; seeded and
    deterministic."""
    if n <= 0:
        raise ValueError("sample count must be positive")
    areas = triangle_areas(mesh)
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero surface area")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    tri = rng.choice(mesh.triangle_count, size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    a = mesh.vertices[mesh.triangles[tri, 0]]
    b = mesh.vertices[mesh.triangles[tri, 1]]
    c = mesh.vertices[mesh.triangles[tri, 2]]
    points = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    face_n = np.cross(
        mesh.vertices[mesh.triangles[:, 1]] - mesh.vertices[mesh.triangles[:, 0]],
        mesh.vertices[mesh.triangles[:, 2]] - mesh.vertices[mesh.triangles[:, 0]],
    )
    norms = np.linalg.norm(face_n, axis=1, keepdims=True)
    face_n = np.divide(face_n, norms, out=np.zeros_like(face_n), where=norms > 0)
    return SurfaceSamples(points, face_n[tri], tri)


def nearest_vertex_transfer(
    points: np.ndarray, point_weights: np.ndarray, mesh: Mesh
) -> SkinWeights:
    """Give each mesh vertex the weight row of its nearest sample point.

    Exact nearest neighbour; distance ties resolve to the lowest point
    index (argmin keeps the first minimum).
    """
    points = np.asarray(points, dtype=np.float64)
    pw = np.asarray(point_weights, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] == 0:
        raise ValueError("points must be a non-empty (n, 3) array")
    if pw.ndim != 2 or pw.shape[0] != points.shape[0]:
        raise ValueError("point_weights must align with points")
    verts = mesh.vertices
    nearest = np.empty(verts.shape[0], dtype=np.int64)
    chunk = max(1, int(2e7) // max(points.shape[0], 1))
    for lo in range(0, verts.shape[0], chunk):
        hi = min(lo + chunk, verts.shape[0])
        d2 = np.sum((verts[lo:hi, None, :] - points[None, :, :]) ** 2, axis=2)
        nearest[lo:hi] = np.argmin(d2, axis=1)
    return SkinWeights(pw[nearest])


def point_segment_distance(
    points: np.ndarray, starts: np.ndarray, ends: np.ndarray
) -> np.ndarray:
    """Exact distances (n_points, n_segments); zero-length segments act as
    points."""
    points = np.asarray(points, dtype=np.float64)
    starts = np.asarray(starts, dtype=np.float64)
    ends = np.asarray(ends, dtype=np.float64)
    d = ends - starts  # (s, 3)
    len2 = np.sum(d * d, axis=1)  # (s,)
    rel = points[:, None, :] - starts[None, :, :]  # (p, s, 3)
    t = np.einsum("psk,sk->ps", rel, d) / np.where(len2 > 0, len2, 1.0)
    t = np.clip(np.where(len2[None, :] > 0, t, 0.0), 0.0, 1.0)
    closest = starts[None, :, :] + t[..., None] * d[None, :, :]
    return np.linalg.norm(points[:, None, :] - closest, axis=2)


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------


def ray_mesh_intersections(
    mesh: Mesh, origin: np.ndarray, direction: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """All ray hits (t ascending) as (t values, triangle ids).

    t is measured in units of ``direction`` (not normalized).  Hits closer
    than RAY_T_EPS are discarded; hits within RAY_MERGE_EPS of each other
    whose triangles share an edge count once (a ray through a shared edge
    or vertex would otherwise double-count), keeping the lowest t and
    triangle id of each merged cluster.
    """
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if origin.shape != (3,) or direction.shape != (3,):
        raise ValueError("origin and direction must be (3,)")
    if not np.linalg.norm(direction) > 0:
        raise ValueError("ray direction must be non-zero")

    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    e1 = b - a
    e2 = c - a
    h = np.cross(direction[None, :], e2)
    det = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = origin[None, :] - a
    u = np.einsum("ij,ij->i", s, h) * inv
    q = np.cross(s, e1)
    v = np.einsum("j,ij->i", direction, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    hit = (
        ok
        & (u >= -_BARY_EPS)
        & (v >= -_BARY_EPS)
        & (u + v <= 1.0 + _BARY_EPS)
        & (t > RAY_T_EPS)
    )
    ts = t[hit]
    tris = np.flatnonzero(hit)
    order = np.argsort(ts, kind="stable")
    ts = ts[order]
    tris = tris[order]
    if ts.size == 0:
        return ts, tris

    # Merge clusters of nearly equal t whose triangles are edge-connected.
    keep_t: list[float] = []
    keep_tri: list[int] = []
    i = 0
    tri_verts = mesh.triangles
    while i < ts.size:
        j = i + 1
        while j < ts.size and ts[j] - ts[j - 1] < RAY_MERGE_EPS:
            j += 1
        cluster = list(range(i, j))
        if len(cluster) == 1:
            keep_t.append(float(ts[i]))
            keep_tri.append(int(tris[i]))
        else:
            comp = {k: k for k in cluster}

            def find(x):
                while comp[x] != x:
                    comp[x] = comp[comp[x]]
                    x = comp[x]
                return x

            for x in cluster:
                vx = set(tri_verts[tris[x]].tolist())
                for y in cluster:
                    if y <= x:
                        continue
                    if len(vx & set(tri_verts[tris[y]].tolist())) >= 2:
                        comp[find(x)] = find(y)
            groups: dict[int, list[int]] = {}
            for x in cluster:
                groups.setdefault(find(x), []).append(x)
            for members in groups.values():
                best = min(members, key=lambda x: (ts[x], tris[x]))
                keep_t.append(float(ts[best]))
                keep_tri.append(int(tris[best]))
        i = j
    order = np.argsort(keep_t, kind="stable")
    return np.asarray(keep_t)[order], np.asarray(keep_tri, dtype=np.int64)[order]


def point_inside_mesh(mesh: Mesh, point: np.ndarray) -> bool:
    """Crossing-parity containment test for closed meshes."""
    probe = np.array([0.5773502691896258, 0.5773502691896257, 0.5773502691896256])
    ts, _ = ray_mesh_intersections(mesh, np.asarray(point, dtype=np.float64), probe)
    return ts.size % 2 == 1


# ---------------------------------------------------------------------------
# Pinhole camera
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics plus a world-to-camera rigid transform.

    Camera space looks along +z; x is image right, y is image down, so
    pixel coordinates are u = fx x/z + cx, v = fy y/z + cy.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.ascontiguousarray(np.asarray(self.rotation, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64))
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be (3, 3) and translation (3,)")
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-6 or np.linalg.det(r) < 0:
            raise ValueError("rotation must be orthonormal with det +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera origin in world coordinates."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    @classmethod
    def look_at(
        cls,
        eye,
        target,
        up=(0.0, 1.0, 0.0),
        *,
        fx: float = 1000.0,
        fy: float | None = None,
        width: int = 1024,
        height: int = 1024,
    ) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        up = np.asarray(up, dtype=np.float64)
        z = target - eye
        nz = np.linalg.norm(z)
        if not nz > 0:
            raise ValueError("eye and target coincide")
        z = z / nz
        x = np.cross(z, up)
        nx = np.linalg.norm(x)
        if not nx > 1e-12:
            raise ValueError("up vector is parallel to the view direction")
        x = x / nx
        y = np.cross(z, x)
        rotation = np.stack([x, y, z])
        return cls(
            fx=float(fx),
            fy=float(fx if fy is None else fy),
            cx=width / 2.0,
            cy=height / 2.0,
            width=int(width),
            height=int(height),
            rotation=rotation,
            translation=-rotation @ eye,
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Camera":
        return cls(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            width=int(data["width"]),
            height=int(data["height"]),
            rotation=np.asarray(data["rotation"], dtype=np.float64),
            translation=np.asarray(data["translation"], dtype=np.float64),
        )


def project(
    camera: Camera, points: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project world points: returns (pixels (n, 2), depth (n,), valid (n,)).

    Points at or behind the camera plane (z <= CAMERA_Z_EPS) are flagged
    invalid; their pixel entries are zero, never NaN.
    """
    points = np.asarray(points, dtype=np.float64)
    squeeze = points.ndim == 1
    pts = np.atleast_2d(points)
    cam = camera.world_to_camera(pts)
    z = cam[:, 2]
    valid = z > CAMERA_Z_EPS
    safe_z = np.where(valid, z, 1.0)
    u = camera.fx * cam[:, 0] / safe_z + camera.cx
    v = camera.fy * cam[:, 1] / safe_z + camera.cy
    uv = np.stack([u, v], axis=1)
    uv[~valid] = 0.0
    if squeeze:
        return uv[0], z[0], valid[0]
    return uv, z, valid


def project_vjp(camera: Camera, points: np.ndarray, grad_uv: np.ndarray) -> np.ndarray:
    """Exact gradient of :func:`project` pixels wrt world points.

    Invalid (behind-camera) points contribute zero gradient, mirroring the
    forward clamp.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    grad_uv = np.atleast_2d(np.asarray(grad_uv, dtype=np.float64))
    cam = camera.world_to_camera(points)
    z = cam[:, 2]
    valid = z > CAMERA_Z_EPS
    safe_z = np.where(valid, z, 1.0)
    gu = np.where(valid, grad_uv[:, 0], 0.0)
    gv = np.where(valid, grad_uv[:, 1], 0.0)
    d_cam = np.zeros_like(cam)
    d_cam[:, 0] = camera.fx * gu / safe_z
    d_cam[:, 1] = camera.fy * gv / safe_z
    d_cam[:, 2] = -(
        camera.fx * cam[:, 0] * gu + camera.fy * cam[:, 1] * gv
    ) / (safe_z * safe_z)
    d_cam[~valid] = 0.0
    return d_cam @ camera.rotation
