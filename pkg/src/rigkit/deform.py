"""Forward kinematics, linear blend skinning, pose sampling, weight baking.

Conventions: a joint's local rotation acts about its own rest position, so
the identity pose maps every joint and vertex onto itself exactly and each
global transform is directly the rest-to-posed map its vertices blend.
The root composes an extra rigid motion (quaternion + translation, also
anchored at the root's rest position) on top of its local rotation.

The module keeps two layers: typed public entry points that validate
their inputs, and a raw differentiable core (`fk_forward` / `fk_backward`
and friends) that treats quaternions as free 4-vectors, normalizing them
inside the computation so gradients stay exact under finite-difference
probing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import quat
from .core import (
    ROOT_PARENT,
    Mesh,
    Pose,
    Skeleton,
    SkinWeights,
    bone_segments,
    canonical_json,
    require_valid,
)
from .geometry import point_segment_distance

ROTATE_PROBABILITY = 0.3
MAX_EULER_DEG = 60.0


@dataclass(frozen=True)
class JointTransforms:
    """Per-joint rest-to-posed rigid transforms as (j, 4, 4) matrices."""

    matrices: np.ndarray

    ORTHO_TOL = 1e-6

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.matrices, dtype=np.float64))
        if m.ndim != 3 or m.shape[1:] != (4, 4):
            raise ValueError(f"matrices must be (j, 4, 4), got {m.shape}")
        r = m[:, :3, :3]
        gram = np.einsum("kab,kcb->kac", r, r)
        if np.max(np.abs(gram - np.eye(3))) > self.ORTHO_TOL:
            raise ValueError("rotation blocks must be orthonormal within 1e-6")
        if np.any(np.linalg.det(r) < 0):
            raise ValueError("rotation blocks must preserve orientation")
        if np.max(np.abs(m[:, 3, :] - np.array([0.0, 0.0, 0.0, 1.0]))) > 0:
            raise ValueError("bottom rows must be [0, 0, 0, 1]")
        m.setflags(write=False)
        object.__setattr__(self, "matrices", m)

    @property
    def joint_count(self) -> int:
        return self.matrices.shape[0]


def topological_order(parents: np.ndarray) -> np.ndarray:
    """Joint indices sorted parents-first (stable by index within a depth)."""
    j = parents.shape[0]
    depths = np.zeros(j, dtype=np.int64)
    for k in range(j):
        d = 0
        c = int(parents[k])
        while c != ROOT_PARENT:
            d += 1
            c = int(parents[c])
        depths[k] = d
    return np.argsort(depths, kind="stable")


# ---------------------------------------------------------------------------
# Differentiable core
# ---------------------------------------------------------------------------


@dataclass
class FkCache:
    rest: np.ndarray
    parents: np.ndarray
    topo: np.ndarray
    root: int
    joint_quats: np.ndarray
    root_quat: np.ndarray | None
    locals_: np.ndarray  # (j, 4, 4)
    root_motion: np.ndarray  # (4, 4)
    globals_: np.ndarray  # (j, 4, 4)


def _rigid_about(rot: np.ndarray, center: np.ndarray) -> np.ndarray:
    """4x4 rotating about a fixed point: x -> rot (x - center) + center."""
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = center - rot @ center
    return m


def fk_forward(
    rest: np.ndarray,
    parents: np.ndarray,
    joint_quats: np.ndarray,
    root_quat: np.ndarray | None,
    root_trans: np.ndarray,
) -> FkCache:
    """Raw forward kinematics; quaternions may be unnormalized."""
    j = rest.shape[0]
    topo = topological_order(parents)
    root = int(np.flatnonzero(parents == ROOT_PARENT)[0])

    rots = quat.to_matrix(joint_quats)  # (j, 3, 3)
    locals_ = np.tile(np.eye(4), (j, 1, 1))
    locals_[:, :3, :3] = rots
    locals_[:, :3, 3] = rest - np.einsum("kab,kb->ka", rots, rest)

    root_motion = np.eye(4)
    if root_quat is not None:
        root_motion = _rigid_about(quat.to_matrix(root_quat), rest[root])
    root_motion[:3, 3] += np.asarray(root_trans, dtype=np.float64)

    globals_ = np.empty((j, 4, 4))
    for k in topo:
        p = int(parents[k])
        base = root_motion if p == ROOT_PARENT else globals_[p]
        globals_[k] = base @ locals_[k]
    return FkCache(
        rest=np.asarray(rest, dtype=np.float64),
        parents=np.asarray(parents),
        topo=topo,
        root=root,
        joint_quats=np.asarray(joint_quats, dtype=np.float64),
        root_quat=None if root_quat is None else np.asarray(root_quat, dtype=np.float64),
        locals_=locals_,
        root_motion=root_motion,
        globals_=globals_,
    )


def fk_backward(
    cache: FkCache, grad_globals: np.ndarray
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    """Pull gradients on the global matrices back to the raw parameters.

    Returns (grad joint_quats (j, 4), grad root_quat (4,) or None,
    grad root_trans (3,)).  grad_globals may have non-zero entries only in
    the top three rows (the bottom row is structural).
    """
    parents = cache.parents
    dG = np.array(grad_globals, dtype=np.float64, copy=True)
    dM = np.zeros((4, 4))
    dL = np.empty_like(cache.locals_)
    for k in cache.topo[::-1]:
        p = int(parents[k])
        base = cache.root_motion if p == ROOT_PARENT else cache.globals_[p]
        dL[k] = base.T @ dG[k]
        d_base = dG[k] @ cache.locals_[k].T
        if p == ROOT_PARENT:
            dM += d_base
        else:
            dG[p] += d_base

    # local = rotation about the joint's rest position
    d_rots = dL[:, :3, :3] - np.einsum("ka,kb->kab", dL[:, :3, 3], cache.rest)
    grad_joint_quats = quat.to_matrix_vjp(cache.joint_quats, d_rots)

    grad_root_trans = dM[:3, 3].copy()
    grad_root_quat = None
    if cache.root_quat is not None:
        d_rot_m = dM[:3, :3] - np.outer(dM[:3, 3], cache.rest[cache.root])
        grad_root_quat = quat.to_matrix_vjp(cache.root_quat, d_rot_m)
    return grad_joint_quats, grad_root_quat, grad_root_trans


def posed_joint_positions(cache: FkCache) -> np.ndarray:
    """Joint positions under the cached pose: G_k applied to rest_k."""
    return (
        np.einsum("kab,kb->ka", cache.globals_[:, :3, :3], cache.rest)
        + cache.globals_[:, :3, 3]
    )


def posed_joint_positions_vjp(cache: FkCache, grad_positions: np.ndarray) -> np.ndarray:
    dG = np.zeros_like(cache.globals_)
    dG[:, :3, :3] = np.einsum("ka,kb->kab", grad_positions, cache.rest)
    dG[:, :3, 3] = grad_positions
    return dG


def lbs_apply(
    vertices: np.ndarray, weight_matrix: np.ndarray, globals_: np.ndarray
) -> np.ndarray:
    """Blend per-joint rigid transforms: v' = sum_k w[v,k] (G_k v)."""
    rot = np.einsum(
        "vk,kab,vb->va", weight_matrix, globals_[:, :3, :3], vertices, optimize=True
    )
    return rot + weight_matrix @ globals_[:, :3, 3]


def lbs_vjp(
    vertices: np.ndarray, weight_matrix: np.ndarray, grad_deformed: np.ndarray
) -> np.ndarray:
    """Gradient wrt the global matrices for fixed vertices and weights."""
    j = weight_matrix.shape[1]
    dG = np.zeros((j, 4, 4))
    dG[:, :3, :3] = np.einsum(
        "vk,va,vb->kab", weight_matrix, grad_deformed, vertices, optimize=True
    )
    dG[:, :3, 3] = weight_matrix.T @ grad_deformed
    return dG


# ---------------------------------------------------------------------------
# Public entry points
# ---------------------------------------------------------------------------


def forward_kinematics(s: Skeleton, pose: Pose) -> JointTransforms:
    """Global rest-to-posed transforms, parents composed before children.

    The identity pose returns j identity matrices exactly.
    """
    require_valid(s)
    if pose.joint_quats.shape[0] != s.joint_count:
        raise ValueError("pose joint count does not match skeleton")
    cache = fk_forward(
        s.joints, s.parents, pose.joint_quats, None, pose.root_translation
    )
    return JointTransforms(cache.globals_)


def posed_joints(s: Skeleton, transforms: JointTransforms) -> np.ndarray:
    """Apply each joint's global transform to its rest position."""
    g = transforms.matrices
    return np.einsum("kab,kb->ka", g[:, :3, :3], s.joints) + g[:, :3, 3]


def linear_blend_skinning(
    mesh: Mesh, s: Skeleton, weights: SkinWeights, transforms: JointTransforms
) -> np.ndarray:
    """Deformed vertex positions (v, 3) under blended joint transforms.

    One-hot weight rows reproduce the joint's rigid transform exactly; the
    whole computation is a single einsum, so results do not depend on any
    vertex partitioning.
    """
    require_valid(s)
    if weights.joint_count != s.joint_count:
        raise ValueError("weight columns must match skeleton joints")
    if weights.vertex_count != mesh.vertex_count:
        raise ValueError("weight rows must match mesh vertices")
    if transforms.joint_count != s.joint_count:
        raise ValueError("transforms must match skeleton joints")
    return lbs_apply(mesh.vertices, weights.matrix, transforms.matrices)


def fold_root_motion(
    root_quat: np.ndarray, root_trans: np.ndarray, joint_quats: np.ndarray, root: int
) -> Pose:
    """Fold an extra root rigid motion into a plain pose.

    Both the root motion and the root joint's local rotation act about the
    root's rest position, so they compose into a single quaternion.
    """
    q = np.array(joint_quats, dtype=np.float64, copy=True)
    q[root] = quat.multiply(quat.normalize(root_quat), quat.normalize(q[root]))
    return Pose(quat.normalize(q), root_trans)


def sample_augmented_pose(
    s: Skeleton,
    rng: int | np.random.Generator,
    *,
    rotate_probability: float = ROTATE_PROBABILITY,
    max_euler_deg: float = MAX_EULER_DEG,
) -> Pose:
    """Random training pose: each joint independently rotates with
    probability 0.3, Euler components uniform in [-60, 60] degrees, axes
    local to the joint; root translation stays zero.  Deterministic per
    seed."""
    require_valid(s)
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    bound = np.deg2rad(max_euler_deg)
    quats = np.zeros((s.joint_count, 4))
    quats[:, 0] = 1.0
    for k in range(s.joint_count):
        if gen.random() < rotate_probability:
            quats[k] = quat.from_euler_xyz(gen.uniform(-bound, bound, 3))
    return Pose(quats, np.zeros(3))


def heuristic_skin_weights(
    mesh: Mesh,
    s: Skeleton,
    *,
    k_nearest: int = 4,
    falloff: float = 0.1,
) -> SkinWeights:
    """Distance-based weights: Gaussian falloff over each vertex's k nearest
    bone segments, renormalized onto the simplex.

    A bone's mass lands on its proximal joint (the parent end), the joint
    whose rotation actually swings that segment; leaf joints therefore
    carry no weight.  Rejects skeletons without bones or with all joints
    coincident.
    """
    require_valid(s)
    if s.bone_count == 0:
        raise ValueError("heuristic weights need at least one bone")
    if np.ptp(s.joints, axis=0).max() == 0:
        raise ValueError("degenerate skeleton: all joints coincident")
    if k_nearest < 1:
        raise ValueError("k_nearest must be >= 1")
    if not falloff > 0:
        raise ValueError("falloff must be positive")

    starts, ends, child = bone_segments(s)
    proximal = s.parents[child]
    dist = point_segment_distance(mesh.vertices, starts, ends)
    v, b = dist.shape
    k = min(k_nearest, b)
    if k < b:
        sel = np.argpartition(dist, k - 1, axis=1)[:, :k]
    else:
        sel = np.tile(np.arange(b), (v, 1))
    d_sel = np.take_along_axis(dist, sel, axis=1)
    scores = np.exp(-((d_sel / falloff) ** 2))
    sums = scores.sum(axis=1)
    starved = sums <= 0.0
    if np.any(starved):
        # Falloff underflow: park the vertex rigidly on its nearest bone.
        nearest = np.argmin(d_sel[starved], axis=1)
        scores[starved] = 0.0
        scores[np.flatnonzero(starved), nearest] = 1.0
        sums = scores.sum(axis=1)
    scores /= sums[:, None]

    weights = np.zeros((v, s.joint_count))
    rows = np.repeat(np.arange(v), k)
    cols = proximal[sel.ravel()]
    np.add.at(weights, (rows, cols.ravel()), scores.ravel())
    return SkinWeights(weights)


# ---------------------------------------------------------------------------
# Animation JSON
# ---------------------------------------------------------------------------


def animation_to_dict(
    root_quats: np.ndarray, root_trans: np.ndarray, joint_quats: np.ndarray
) -> dict:
    """Frames as {root_quat, root_trans, joint_quats}; w-first quaternions."""
    n = root_quats.shape[0]
    if root_trans.shape[0] != n or joint_quats.shape[0] != n:
        raise ValueError("frame counts must agree")
    frames = []
    for i in range(n):
        frames.append(
            {
                "root_quat": root_quats[i].tolist(),
                "root_trans": root_trans[i].tolist(),
                "joint_quats": joint_quats[i].tolist(),
            }
        )
    return {"frames": frames}


def animation_from_dict(data: dict) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not isinstance(data, dict) or "frames" not in data or not data["frames"]:
        raise ValueError("animation JSON requires a non-empty 'frames' list")
    rq, rt, jq = [], [], []
    for i, frame in enumerate(data["frames"]):
        try:
            rq.append(np.asarray(frame["root_quat"], dtype=np.float64))
            rt.append(np.asarray(frame["root_trans"], dtype=np.float64))
            jq.append(np.asarray(frame["joint_quats"], dtype=np.float64))
        except (KeyError, TypeError) as e:
            raise ValueError(f"frame {i} malformed: {e}") from None
    root_quats = np.stack(rq)
    root_trans = np.stack(rt)
    joint_quats = np.stack(jq)
    if root_quats.shape[1:] != (4,) or root_trans.shape[1:] != (3,):
        raise ValueError("root_quat must be length 4 and root_trans length 3")
    if joint_quats.ndim != 3 or joint_quats.shape[2] != 4:
        raise ValueError("joint_quats must be (joints, 4) per frame")
    return root_quats, root_trans, joint_quats


def save_animation(path: str | Path, root_quats, root_trans, joint_quats) -> None:
    Path(path).write_text(
        canonical_json(animation_to_dict(root_quats, root_trans, joint_quats))
    )


def load_animation(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return animation_from_dict(json.loads(Path(path).read_text()))
