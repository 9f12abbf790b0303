import numpy as np
import pytest

from sociopose.pose_features import N_JOINTS, JointMap, JointTrack

JMAP = JointMap()


def head_joints(left_eye, right_eye, nose, neck, fill=0.0, jmap=JMAP):
    """45x3 joints with only the head joints set."""
    j = np.full((N_JOINTS, 3), fill, dtype=float)
    j[jmap.left_eye_index] = left_eye
    j[jmap.right_eye_index] = right_eye
    j[jmap.nose_index] = nose
    j[jmap.neck_index] = neck
    return j


def facing_joints(center, direction, jmap=JMAP):
    """Joints whose head center is ``center`` and head direction ``direction``."""
    c = np.asarray(center, dtype=float)
    d = np.asarray(direction, dtype=float)
    return head_joints(c + [-0.03, 0, 0], c + [0.03, 0, 0], c + 0.1 * d, c - 0.1 * d, jmap=jmap)


def track_from_scene_joints(clip_id, scene_joints, depth=None):
    """Track whose translations are zero in x/y and whose fused depth is ``depth``.

    ``scene_joints`` has shape (F, 2, 45, 3); root-relative joints are chosen
    so the scene-space result is exactly ``scene_joints``.
    """
    J = np.asarray(scene_joints, dtype=float)
    f = J.shape[0]
    D = np.full((f, 2), 1.0 if depth is None else depth)
    rel = J.copy()
    rel[..., 2] -= D[:, :, None]
    T = np.zeros((f, 2, 3))
    T[..., 2] = 7.0  # overwritten by fusion
    return JointTrack(clip_id, rel, T, D)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
