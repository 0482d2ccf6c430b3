"""Data model, structure validation, joint orders, and rig JSON."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rigkit import (
    MAX_JOINTS,
    ROOT_PARENT,
    InvalidSkeletonError,
    Mesh,
    Pose,
    Rig,
    Skeleton,
    SkinWeights,
    bone_coordinates,
    bone_segments,
    canonical_json,
    graph_distance_matrix,
    hierarchical_order,
    joint_depths,
    load_rig,
    permute_joints,
    save_rig,
    spatial_order,
    validate_skeleton,
)

from helpers import bfs_graph_distances, random_tree


def chain(*points):
    pts = np.array(points, dtype=np.float64)
    parents = np.arange(-1, len(pts) - 1)
    return Skeleton(pts, parents)


class TestSkeleton:
    def test_shapes_enforced(self):
        with pytest.raises(ValueError):
            Skeleton(np.zeros((3, 2)), np.array([-1, 0, 1]))
        with pytest.raises(ValueError):
            Skeleton(np.zeros((3, 3)), np.array([-1, 0]))

    def test_arrays_read_only(self):
        s = chain([0, 0, 0], [1, 0, 0])
        with pytest.raises(ValueError):
            s.joints[0, 0] = 5.0
        with pytest.raises(ValueError):
            s.parents[0] = 0

    def test_counts(self):
        s = chain([0, 0, 0], [1, 0, 0], [2, 0, 0])
        assert s.joint_count == 3
        assert s.bone_count == 2

    def test_structural_problems_allowed_at_construction(self):
        # Construction checks shapes only; the validator owns structure.
        s = Skeleton(np.zeros((2, 3)), np.array([-1, 99]))
        assert not validate_skeleton(s).ok


class TestValidation:
    def test_valid_tree(self):
        report = validate_skeleton(random_tree(np.random.default_rng(0), 30))
        assert report.ok
        assert report.codes() == ()

    def test_empty(self):
        s = Skeleton(np.zeros((0, 3)), np.zeros(0, dtype=np.int64))
        assert validate_skeleton(s).codes() == ("empty",)

    def test_joint_cap(self):
        rng = np.random.default_rng(1)
        assert validate_skeleton(random_tree(rng, MAX_JOINTS)).ok
        report = validate_skeleton(random_tree(rng, MAX_JOINTS + 1))
        assert "joint-cap" in report.codes()

    def test_non_finite(self):
        s = Skeleton(np.array([[0, 0, 0], [np.nan, 0, 0]]), np.array([-1, 0]))
        assert "non-finite" in validate_skeleton(s).codes()

    def test_no_root(self):
        s = Skeleton(np.zeros((2, 3)), np.array([1, 0]))
        codes = validate_skeleton(s).codes()
        assert "no-root" in codes
        assert "cycle" in codes

    def test_multiple_roots(self):
        s = Skeleton(np.zeros((3, 3)), np.array([-1, -1, 0]))
        assert "multiple-roots" in validate_skeleton(s).codes()

    def test_dangling_parent(self):
        s = Skeleton(np.zeros((3, 3)), np.array([-1, 7, 0]))
        assert "dangling-parent" in validate_skeleton(s).codes()

    def test_cycle(self):
        s = Skeleton(np.zeros((4, 3)), np.array([-1, 2, 3, 1]))
        assert "cycle" in validate_skeleton(s).codes()

    def test_self_parent_is_cycle(self):
        s = Skeleton(np.zeros((2, 3)), np.array([-1, 1]))
        assert "cycle" in validate_skeleton(s).codes()

    def test_operations_reject_invalid(self):
        s = Skeleton(np.zeros((2, 3)), np.array([-1, 5]))
        with pytest.raises(InvalidSkeletonError):
            graph_distance_matrix(s)
        with pytest.raises(InvalidSkeletonError):
            hierarchical_order(s)


class TestMesh:
    def test_index_range(self):
        with pytest.raises(ValueError):
            Mesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))
        with pytest.raises(ValueError):
            Mesh(np.zeros((3, 3)), np.array([[0, 1, -1]]))

    def test_normals_shape(self):
        v = np.zeros((3, 3))
        t = np.array([[0, 1, 2]])
        with pytest.raises(ValueError):
            Mesh(v, t, normals=np.zeros((2, 3)))
        m = Mesh(v, t, normals=np.ones((3, 3)))
        assert m.normals.shape == (3, 3)


class TestSkinWeights:
    def test_rows_must_be_simplex(self):
        with pytest.raises(ValueError):
            SkinWeights(np.array([[0.5, 0.4]]))
        with pytest.raises(ValueError):
            SkinWeights(np.array([[1.2, -0.2]]))
        w = SkinWeights(np.array([[0.25, 0.75], [1.0, 0.0]]))
        assert w.vertex_count == 2 and w.joint_count == 2

    def test_tolerance(self):
        SkinWeights(np.array([[0.5, 0.5 + 5e-7]]))
        with pytest.raises(ValueError):
            SkinWeights(np.array([[0.5, 0.5 + 5e-6]]))


class TestPose:
    def test_identity(self):
        p = Pose.identity(4)
        assert np.array_equal(p.joint_quats[:, 0], np.ones(4))
        assert np.array_equal(p.root_translation, np.zeros(3))

    def test_unit_norm_required(self):
        q = np.zeros((2, 4))
        q[:, 0] = 1.0
        q[1] = [2.0, 0, 0, 0]
        with pytest.raises(ValueError):
            Pose(q, np.zeros(3))


class TestGraphDistances:
    def test_matches_bfs_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            s = random_tree(rng, int(rng.integers(2, 40)))
            assert np.array_equal(graph_distance_matrix(s), bfs_graph_distances(s))

    def test_chain_distances(self):
        s = chain([0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0])
        d = graph_distance_matrix(s)
        assert d[0, 3] == 3
        assert d[1, 2] == 1
        assert np.array_equal(d, d.T)
        assert np.array_equal(np.diag(d), np.zeros(4, dtype=np.int64))


class TestOrders:
    def test_joint_depths(self):
        s = Skeleton(np.zeros((5, 3)), np.array([-1, 0, 0, 1, 3]))
        assert joint_depths(s.parents).tolist() == [0, 1, 1, 2, 3]

    def test_spatial_order_sorts_zyx(self):
        joints = np.array([
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
        ])
        s = Skeleton(joints, np.array([-1, 0, 1, 2]))
        # ascending z, then y, then x
        assert spatial_order(s).tolist() == [2, 1, 3, 0]

    def test_spatial_tie_break_is_original_index(self):
        joints = np.zeros((3, 3))
        s = Skeleton(joints, np.array([-1, 0, 0]))
        assert spatial_order(s).tolist() == [0, 1, 2]

    def test_hierarchical_levels_then_zyx(self):
        joints = np.array([
            [0.0, 0.0, 0.0],    # root
            [0.0, 0.0, 2.0],    # depth 1, z=2
            [0.0, 0.0, 1.0],    # depth 1, z=1 -> first within level
            [0.0, 0.0, -1.0],   # depth 2
        ])
        s = Skeleton(joints, np.array([-1, 0, 0, 1]))
        assert hierarchical_order(s).tolist() == [0, 2, 1, 3]

    def test_hierarchical_is_causal(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            s = random_tree(rng, int(rng.integers(2, 60)))
            order = hierarchical_order(s)
            position = np.empty(s.joint_count, dtype=np.int64)
            position[order] = np.arange(s.joint_count)
            for k in range(s.joint_count):
                p = s.parents[k]
                if p != ROOT_PARENT:
                    assert position[p] < position[k]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=2, max_value=40), st.integers(min_value=0, max_value=2**31))
    def test_hierarchical_causal_property(self, joints, seed):
        s = random_tree(np.random.default_rng(seed), joints)
        order = hierarchical_order(s)
        position = np.empty(joints, dtype=np.int64)
        position[order] = np.arange(joints)
        parents = s.parents
        mask = parents != ROOT_PARENT
        assert np.all(position[parents[mask]] < position[np.flatnonzero(mask)])

    def test_permute_joints_round_trip(self):
        rng = np.random.default_rng(3)
        s = random_tree(rng, 20)
        order = hierarchical_order(s)
        t = permute_joints(s, order)
        assert validate_skeleton(t).ok
        # Same geometry, same topology as graphs.
        assert np.allclose(np.sort(t.joints, axis=0), np.sort(s.joints, axis=0))
        da = graph_distance_matrix(s)
        db = graph_distance_matrix(t)
        inv = np.empty(20, dtype=np.int64)
        inv[order] = np.arange(20)
        assert np.array_equal(db, da[np.ix_(order, order)])

    def test_permute_rejects_non_permutation(self):
        s = chain([0, 0, 0], [1, 0, 0])
        with pytest.raises(ValueError):
            permute_joints(s, np.array([0, 0]))


class TestBones:
    def test_bone_segments(self):
        s = chain([0, 0, 0], [1, 0, 0], [1, 1, 0])
        starts, ends, child = bone_segments(s)
        assert starts.shape == (2, 3) and ends.shape == (2, 3)
        assert child.tolist() == [1, 2]
        assert np.array_equal(starts[0], [0, 0, 0])
        assert np.array_equal(ends[0], [1, 0, 0])

    def test_bone_coordinates_root_row(self):
        s = chain([0.5, 0, 0], [1, 0, 0])
        bc = bone_coordinates(s)
        assert bc.shape == (2, 6)
        # Root row duplicates the joint's own position.
        assert np.array_equal(bc[0, :3], bc[0, 3:])


class TestRigJson:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        s = random_tree(rng, 12)
        w = SkinWeights(np.full((4, 12), 1.0 / 12.0))
        path = tmp_path / "rig.json"
        save_rig(path, Rig(s, w))
        back = load_rig(path)
        assert np.array_equal(back.skeleton.joints, s.joints)
        assert np.array_equal(back.skeleton.parents, s.parents)
        assert np.array_equal(back.weights.matrix, w.matrix)

    def test_names_preserved(self, tmp_path):
        s = Skeleton(np.zeros((2, 3)), np.array([-1, 0]), names=("hip", "knee"))
        path = tmp_path / "rig.json"
        save_rig(path, Rig(s))
        assert load_rig(path).skeleton.names == ("hip", "knee")

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"joints": [[0, 0, 0]]}))
        with pytest.raises(ValueError):
            load_rig(path)

    def test_canonical_json_stable(self):
        a = canonical_json({"b": 1.5, "a": [1, 2]})
        b = canonical_json({"a": [1, 2], "b": 1.5})
        assert a == b
        assert a.endswith("\n")
