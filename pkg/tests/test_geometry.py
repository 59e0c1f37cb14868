import numpy as np
import pytest

from flowpose import (CameraTrack, DetectionTrack, FlowField, InvalidInputError,
                      PoseTrack, SceneBundle, SkeletonTopology, average_flows,
                      average_tracks, bone_lengths, default_topology, project,
                      project_track)


def test_project_identity_camera():
    for z in (0.0, -3.0, 17.5):
        assert np.allclose(project([0.0, 0.0, z], [1.0, 0.0, 0.0]), [0.0, 0.0])


def test_project_direct_formula():
    assert np.allclose(project([1.0, 2.0, 5.0], [100.0, 50.0, 60.0]), [150.0, 260.0])


def test_project_partials_match_central_differences():
    # Partials w.r.t. (s, tx, ty) at point (1, 2, z) should be ((1,2),(1,0),(0,1)).
    point = np.array([1.0, 2.0, -4.0])
    cam = np.array([3.0, 7.0, -2.0])
    expected = np.array([[1.0, 2.0], [1.0, 0.0], [0.0, 1.0]])
    h = 1e-5
    for i in range(3):
        hi, lo = cam.copy(), cam.copy()
        hi[i] += h
        lo[i] -= h
        numeric = (project(point, hi) - project(point, lo)) / (2 * h)
        assert np.allclose(numeric, expected[i], atol=1e-6)


def test_project_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        project([np.nan, 0.0, 0.0], [1.0, 0.0, 0.0])
    with pytest.raises(InvalidInputError):
        project([1.0, 0.0, 0.0], [0.0, 0.0, 0.0])  # non-positive scale


def test_project_linearity_in_point():
    rng = np.random.default_rng(0)
    cam = np.array([3.5, 10.0, -4.0])
    p, q = rng.normal(size=3), rng.normal(size=3)
    lhs = project(p, cam) - project(q, cam)
    assert np.allclose(lhs, cam[0] * (p - q)[:2], rtol=0, atol=1e-12)


def test_bone_lengths_examples():
    topo = SkeletonTopology(joint_count=2, bones=((0, 1),))
    zero = PoseTrack(np.zeros((1, 2, 3)))
    assert bone_lengths(zero, topo, 0)[0] == 0.0
    tri = PoseTrack([[[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]]])
    assert bone_lengths(tri, topo, 0)[0] == 5.0


def test_bone_lengths_matches_independent_recomputation():
    rng = np.random.default_rng(7)
    topo = default_topology()
    pose = PoseTrack(rng.normal(size=(3, 17, 3)))
    for t in range(3):
        got = bone_lengths(pose, topo, t)
        for b, (j, k) in enumerate(topo.bones):
            # per-component recomputation with plain floats
            dx = pose.positions[t, j, 0] - pose.positions[t, k, 0]
            dy = pose.positions[t, j, 1] - pose.positions[t, k, 1]
            dz = pose.positions[t, j, 2] - pose.positions[t, k, 2]
            assert abs(got[b] - (dx * dx + dy * dy + dz * dz) ** 0.5) < 1e-12


def test_bone_lengths_translation_invariant():
    rng = np.random.default_rng(8)
    topo = default_topology()
    X = rng.normal(size=(2, 17, 3))
    shifted = X + np.array([5.0, -3.0, 11.0])
    a = bone_lengths(PoseTrack(X), topo, 1)
    b = bone_lengths(PoseTrack(shifted), topo, 1)
    assert np.allclose(a, b, atol=1e-9)


def test_bone_lengths_frame_out_of_range():
    topo = SkeletonTopology(joint_count=2, bones=((0, 1),))
    pose = PoseTrack(np.zeros((2, 2, 3)))
    with pytest.raises(IndexError):
        bone_lengths(pose, topo, 2)


def test_average_tracks_examples():
    rng = np.random.default_rng(1)
    a = PoseTrack(rng.normal(size=(2, 3, 3)))
    assert np.array_equal(average_tracks(a, a).positions, a.positions)
    neg = PoseTrack(-a.positions)
    assert np.all(average_tracks(a, neg).positions == 0.0)
    one = PoseTrack([[[1.0, 1.0, 1.0]]])
    three = PoseTrack([[[3.0, 3.0, 3.0]]])
    assert np.array_equal(average_tracks(one, three).positions,
                          [[[2.0, 2.0, 2.0]]])


def test_average_commutes_exactly():
    rng = np.random.default_rng(2)
    a = PoseTrack(rng.normal(size=(4, 5, 3)))
    b = PoseTrack(rng.normal(size=(4, 5, 3)))
    assert np.array_equal(average_tracks(a, b).positions,
                          average_tracks(b, a).positions)
    fa = FlowField(rng.normal(size=(6, 7, 2)))
    fb = FlowField(rng.normal(size=(6, 7, 2)))
    assert np.array_equal(average_flows(fa, fb).uv, average_flows(fb, fa).uv)


def test_average_rejects_mismatch():
    a = PoseTrack(np.zeros((2, 3, 3)))
    b = PoseTrack(np.zeros((2, 4, 3)))
    with pytest.raises(InvalidInputError):
        average_tracks(a, b)
    with pytest.raises(InvalidInputError):
        average_flows(FlowField(np.zeros((2, 2, 2))), FlowField(np.zeros((3, 2, 2))))


def test_topology_invariants():
    with pytest.raises(InvalidInputError):
        SkeletonTopology(joint_count=3, bones=((0, 3),))  # out of range
    with pytest.raises(InvalidInputError):
        SkeletonTopology(joint_count=3, bones=((1, 1),))  # degenerate
    with pytest.raises(InvalidInputError):
        SkeletonTopology(joint_count=3, bones=((0, 1), (1, 0)))  # duplicate
    with pytest.raises(InvalidInputError):
        SkeletonTopology(joint_count=4, bones=((0, 1), (2, 3)))  # disconnected
    topo = default_topology()
    assert topo.joint_count == 17
    assert len(topo.bones) == 16


def test_track_invariants():
    with pytest.raises(InvalidInputError):
        PoseTrack(np.full((1, 1, 3), np.inf))
    with pytest.raises(InvalidInputError):
        CameraTrack([[0.0, 1.0, 1.0]])  # scale must be positive
    with pytest.raises(InvalidInputError):
        DetectionTrack(np.zeros((1, 2, 2)), np.array([[0.5, 1.5]]))  # conf > 1
    with pytest.raises(InvalidInputError):
        FlowField(np.zeros((0, 4, 2)))


def test_tracks_are_immutable():
    pose = PoseTrack(np.zeros((1, 1, 3)))
    with pytest.raises(ValueError):
        pose.positions[0, 0, 0] = 1.0


def test_scene_bundle_validation():
    topo = SkeletonTopology(joint_count=2, bones=((0, 1),))
    det = DetectionTrack(np.zeros((3, 2, 2)), np.ones((3, 2)))
    flows = tuple(FlowField(np.zeros((4, 4, 2))) for _ in range(2))
    pose = PoseTrack(np.zeros((3, 2, 3)))
    cam = CameraTrack(np.tile([1.0, 0.0, 0.0], (3, 1)))
    bundle = SceneBundle(topology=topo, width=4, height=4, detections=det,
                         flows=flows, pose=pose, camera=cam)
    assert bundle.frames == 3
    with pytest.raises(InvalidInputError):
        SceneBundle(topology=topo, width=4, height=4, detections=det,
                    flows=flows[:1], pose=pose, camera=cam)  # wrong flow count
    with pytest.raises(InvalidInputError):
        SceneBundle(topology=topo, width=4, height=4, detections=det,
                    flows=flows)  # 3d mode without pose/camera
    two_d = SceneBundle(topology=topo, width=4, height=4, detections=det,
                        flows=flows, mode="2d")
    assert two_d.pose is None


def test_project_track_shapes():
    pose = PoseTrack(np.ones((2, 3, 3)))
    cam = CameraTrack([[2.0, 1.0, 0.0], [4.0, 0.0, 1.0]])
    p = project_track(pose, cam)
    assert p.shape == (2, 3, 2)
    assert np.allclose(p[0, 0], [3.0, 2.0])
    assert np.allclose(p[1, 0], [4.0, 5.0])
