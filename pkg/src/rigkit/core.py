"""Rig data model: skeletons, meshes, skinning weights, poses.

Coordinates live in normalized object units; a well-formed asset fits in the
[-0.5, 0.5]^3 cube.  Parent links use ``ROOT_PARENT`` (-1) as the root
sentinel everywhere in the library; the +1 offset used by the token format
is confined to the codec module.

All value types are immutable after construction (arrays are marked
read-only), so they can be shared freely across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROOT_PARENT = -1
# Hard cap shared by the token vocabulary and the validator.
MAX_JOINTS = 70


class InvalidSkeletonError(ValueError):
    """Raised when an operation requires a structurally valid skeleton."""


def _frozen(a, dtype) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Skeleton:
    """A joint tree: positions (j, 3) plus a parent index per joint.

    Construction only enforces shapes; structural soundness (single root,
    acyclic, within the joint cap) is checked by :func:`validate_skeleton`,
    and operations that need a sound tree raise ``InvalidSkeletonError``.
    """

    joints: np.ndarray
    parents: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        joints = _frozen(self.joints, np.float64)
        parents = _frozen(self.parents, np.int64)
        if joints.ndim != 2 or joints.shape[1] != 3:
            raise ValueError(f"joints must be (j, 3), got {joints.shape}")
        if parents.shape != (joints.shape[0],):
            raise ValueError(
                f"parents must be ({joints.shape[0]},), got {parents.shape}"
            )
        if self.names is not None and len(self.names) != joints.shape[0]:
            raise ValueError("names length must match joint count")
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "parents", parents)

    @property
    def joint_count(self) -> int:
        return self.joints.shape[0]

    @property
    def bone_count(self) -> int:
        return int(np.sum(self.parents != ROOT_PARENT))


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh with optional per-vertex normals."""

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        vertices = _frozen(self.vertices, np.float64)
        triangles = _frozen(self.triangles, np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (v, 3), got {vertices.shape}")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError(f"triangles must be (f, 3), got {triangles.shape}")
        if triangles.size and (
            triangles.min() < 0 or triangles.max() >= vertices.shape[0]
        ):
            raise ValueError("triangle indices out of vertex range")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)
        if self.normals is not None:
            normals = _frozen(self.normals, np.float64)
            if normals.shape != vertices.shape:
                raise ValueError("normals must match vertices shape")
            object.__setattr__(self, "normals", normals)

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]

    @property
    def triangle_count(self) -> int:
        return self.triangles.shape[0]


@dataclass(frozen=True)
class SkinWeights:
    """Per-vertex weights over joints; every row is a point on the simplex."""

    matrix: np.ndarray

    ROW_SUM_TOL = 1e-6

    def __post_init__(self):
        m = _frozen(self.matrix, np.float64)
        if m.ndim != 2:
            raise ValueError(f"weights must be 2-d, got shape {m.shape}")
        if m.size:
            if m.min() < -self.ROW_SUM_TOL or m.max() > 1.0 + self.ROW_SUM_TOL:
                raise ValueError("weights must lie in [0, 1]")
            sums = m.sum(axis=1)
            if np.max(np.abs(sums - 1.0)) > self.ROW_SUM_TOL:
                raise ValueError("weight rows must sum to 1 within 1e-6")
        object.__setattr__(self, "matrix", m)

    @property
    def vertex_count(self) -> int:
        return self.matrix.shape[0]

    @property
    def joint_count(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class Pose:
    """Per-joint local rotations (unit quaternions, w-first) + root translation."""

    joint_quats: np.ndarray
    root_translation: np.ndarray

    UNIT_TOL = 1e-6

    def __post_init__(self):
        q = _frozen(self.joint_quats, np.float64)
        t = _frozen(self.root_translation, np.float64)
        if q.ndim != 2 or q.shape[1] != 4:
            raise ValueError(f"joint_quats must be (j, 4), got {q.shape}")
        if t.shape != (3,):
            raise ValueError(f"root_translation must be (3,), got {t.shape}")
        norms = np.linalg.norm(q, axis=1)
        if q.size and np.max(np.abs(norms - 1.0)) > self.UNIT_TOL:
            raise ValueError("joint quaternions must be unit within 1e-6")
        object.__setattr__(self, "joint_quats", q)
        object.__setattr__(self, "root_translation", t)

    @classmethod
    def identity(cls, joint_count: int) -> "Pose":
        q = np.zeros((joint_count, 4))
        q[:, 0] = 1.0
        return cls(q, np.zeros(3))


@dataclass(frozen=True)
class Rig:
    """A skeleton bundled with optional skinning weights (rig JSON contents)."""

    skeleton: Skeleton
    weights: SkinWeights | None = None


@dataclass(frozen=True)
class ValidationIssue:
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[ValidationIssue, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.issues

    def codes(self) -> tuple[str, ...]:
        return tuple(i.code for i in self.issues)

    def __str__(self) -> str:
        if self.ok:
            return "valid"
        return "\n".join(f"{i.code}: {i.message}" for i in self.issues)


def validate_skeleton(s: Skeleton) -> ValidationReport:
    """Check structural invariants; the report lists every violation found.

    An empty report means: exactly one root, all parent indices in range,
    no self-parenting, no cycles, finite coordinates, and at most
    ``MAX_JOINTS`` joints.
    """
    issues: list[ValidationIssue] = []
    j = s.joint_count
    if j == 0:
        issues.append(ValidationIssue("empty", "skeleton has no joints"))
        return ValidationReport(tuple(issues))
    if j > MAX_JOINTS:
        issues.append(
            ValidationIssue("joint-cap", f"{j} joints exceeds cap of {MAX_JOINTS}")
        )
    if not np.all(np.isfinite(s.joints)):
        issues.append(
            ValidationIssue("non-finite", "joint coordinates contain NaN or Inf")
        )

    roots = np.flatnonzero(s.parents == ROOT_PARENT)
    if roots.size == 0:
        issues.append(ValidationIssue("no-root", "no joint has the root sentinel"))
    elif roots.size > 1:
        issues.append(
            ValidationIssue(
                "multiple-roots",
                f"joints {roots.tolist()} all claim to be root; "
                "connected single-tree skeletons are required",
            )
        )

    dangling = [
        k
        for k in range(j)
        if s.parents[k] != ROOT_PARENT and not 0 <= s.parents[k] < j
    ]
    if dangling:
        issues.append(
            ValidationIssue(
                "dangling-parent",
                f"joints {dangling} reference parents outside [0, {j})",
            )
        )

    # Cycle scan: follow parent links from each joint; a walk that exceeds j
    # steps without reaching a root (or a dangling link) is trapped in a cycle.
    in_cycle: set[int] = set()
    for start in range(j):
        seen = []
        k = start
        while 0 <= k < j and len(seen) <= j:
            seen.append(k)
            p = int(s.parents[k])
            if p == ROOT_PARENT or not 0 <= p < j:
                break
            k = p
        else:
            in_cycle.update(seen)
    if in_cycle:
        issues.append(
            ValidationIssue(
                "cycle", f"parent links of joints {sorted(in_cycle)} form a cycle"
            )
        )
    return ValidationReport(tuple(issues))


def require_valid(s: Skeleton) -> None:
    report = validate_skeleton(s)
    if not report.ok:
        raise InvalidSkeletonError(str(report))


def joint_depths(parents: np.ndarray) -> np.ndarray:
    """Hops from the root for every joint; assumes parents form a tree."""
    j = parents.shape[0]
    depths = np.full(j, -1, dtype=np.int64)
    for k in range(j):
        chain = []
        c = k
        while c != ROOT_PARENT and depths[c] < 0:
            chain.append(c)
            c = int(parents[c])
        base = 0 if c == ROOT_PARENT else int(depths[c]) + 1
        for i, node in enumerate(reversed(chain)):
            depths[node] = base + i
    return depths


def graph_distance_matrix(s: Skeleton) -> np.ndarray:
    """Pairwise hop counts (bone counts) along the joint tree.

    Uses depths and lowest common ancestors:
    d(a, b) = depth(a) + depth(b) - 2 * depth(lca(a, b)).
    """
    require_valid(s)
    parents = s.parents
    j = s.joint_count
    depths = joint_depths(parents)
    # Ancestor chains, root-last, for LCA lookups.  j <= 70 keeps this cheap.
    chains: list[list[int]] = []
    for k in range(j):
        chain = [k]
        while parents[chain[-1]] != ROOT_PARENT:
            chain.append(int(parents[chain[-1]]))
        chains.append(chain)
    chain_sets = [set(c) for c in chains]
    d = np.zeros((j, j), dtype=np.int64)
    for a in range(j):
        for b in range(a + 1, j):
            anc = chain_sets[b]
            for node in chains[a]:
                if node in anc:
                    hops = depths[a] + depths[b] - 2 * depths[node]
                    break
            d[a, b] = d[b, a] = hops
    return d


def spatial_order(s: Skeleton) -> np.ndarray:
    """Global joint order ascending by (z, y, x), ties kept in original order.

    The order ignores the tree, so a child can precede its parent; token
    streams produced under it are generally not causally decodable.
    """
    z, y, x = s.joints[:, 2], s.joints[:, 1], s.joints[:, 0]
    return np.lexsort((np.arange(s.joint_count), x, y, z))


def hierarchical_order(s: Skeleton) -> np.ndarray:
    """Breadth-first joint order, spatially sorted within each depth level.

    Root first; every joint appears after its parent; among joints at the
    same depth the order is ascending by (z, y, x) with original index as
    the final tie-break.
    """
    require_valid(s)
    depths = joint_depths(s.parents)
    z, y, x = s.joints[:, 2], s.joints[:, 1], s.joints[:, 0]
    return np.lexsort((np.arange(s.joint_count), x, y, z, depths))


def permute_joints(s: Skeleton, order: np.ndarray) -> Skeleton:
    """Reindex joints so new joint i is old joint order[i]; parents remapped."""
    order = np.asarray(order, dtype=np.int64)
    j = s.joint_count
    if sorted(order.tolist()) != list(range(j)):
        raise ValueError("order must be a permutation of all joint indices")
    inverse = np.empty(j, dtype=np.int64)
    inverse[order] = np.arange(j)
    parents = np.array(
        [
            ROOT_PARENT if s.parents[o] == ROOT_PARENT else inverse[s.parents[o]]
            for o in order
        ],
        dtype=np.int64,
    )
    names = tuple(s.names[o] for o in order) if s.names is not None else None
    return Skeleton(s.joints[order], parents, names)


def bone_coordinates(s: Skeleton) -> np.ndarray:
    """(j, 6) rows of [parent position, own position]; the root row
    duplicates its own position in both halves."""
    require_valid(s)
    out = np.empty((s.joint_count, 6))
    for k in range(s.joint_count):
        p = int(s.parents[k])
        head = s.joints[k] if p == ROOT_PARENT else s.joints[p]
        out[k, :3] = head
        out[k, 3:] = s.joints[k]
    return out


def bone_segments(s: Skeleton) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bone endpoint arrays (starts, ends) plus the child joint index per bone.

    A bone is the segment from a non-root joint's parent to the joint itself.
    """
    child = np.flatnonzero(s.parents != ROOT_PARENT)
    starts = s.joints[s.parents[child]]
    ends = s.joints[child]
    return starts, ends, child


# ---------------------------------------------------------------------------
# Rig JSON
# ---------------------------------------------------------------------------


def rig_to_dict(rig: Rig) -> dict:
    data: dict = {
        "joints": rig.skeleton.joints.tolist(),
        "parents": rig.skeleton.parents.tolist(),
    }
    if rig.skeleton.names is not None:
        data["names"] = list(rig.skeleton.names)
    if rig.weights is not None:
        data["weights"] = rig.weights.matrix.tolist()
    return data


def rig_from_dict(data: dict) -> Rig:
    if not isinstance(data, dict) or "joints" not in data or "parents" not in data:
        raise ValueError("rig JSON requires 'joints' and 'parents'")
    names = tuple(data["names"]) if "names" in data else None
    skeleton = Skeleton(np.asarray(data["joints"], dtype=np.float64),
                        np.asarray(data["parents"], dtype=np.int64),
                        names)
    weights = None
    if "weights" in data and data["weights"] is not None:
        matrix = np.asarray(data["weights"], dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != skeleton.joint_count:
            raise ValueError("weights must be (vertices, joints)")
        weights = SkinWeights(matrix)
    return Rig(skeleton, weights)


def save_rig(path: str | Path, rig: Rig) -> None:
    Path(path).write_text(canonical_json(rig_to_dict(rig)))


def load_rig(path: str | Path) -> Rig:
    return rig_from_dict(json.loads(Path(path).read_text()))


def canonical_json(data) -> str:
    """Serialize with sorted keys and round-trip float formatting so equal
    inputs always produce byte-identical files."""
    return json.dumps(data, sort_keys=True, indent=1) + "\n"
