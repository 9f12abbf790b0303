"""Clip-level pose features from dyadic 3D joint tracks.

Three feature kinds are produced per clip:

* ``joints3d``  - 45 joints x 3 coordinates x 2 agents, averaged over frames (270)
* ``social3d``  - per agent head center (x, y, z) and head direction (dx, dy, dz) (12)
* ``social2d``  - ``social3d`` with the z and dz entries deleted (8)

All coordinates are meters in camera space. Joints arrive root-relative and
are placed in the scene by adding the camera translation whose depth has been
replaced by the metric depth estimate (``fuse_depth``).
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ClipRejected,
    DegenerateDirectionError,
    InvalidDepthError,
    PoseError,
)

N_JOINTS = 45
N_AGENTS = 2
FEATURE_WIDTHS = {"joints3d": N_JOINTS * 3 * N_AGENTS, "social3d": 12, "social2d": 8}
FEATURE_KINDS = ("joints3d", "social3d", "social2d", "embedding")

# positions of (x, y, dx, dy) for both agents inside a social3d vector
_KEEP_2D = np.array([0, 1, 3, 4, 6, 7, 9, 10])
_DIRECTION_EPS = 1e-9


@dataclass(frozen=True)
class JointMap:
    """Indices of the four head joints inside the 45-joint set.

    Defaults: neck is SMPL body joint 12, and the nose and eyes are taken as
    the first three extra landmarks (24, 25, 26). Check these against the
    joint regressor of the upstream mesh-recovery model before trusting them.
    """

    neck_index: int = 12
    nose_index: int = 24
    left_eye_index: int = 25
    right_eye_index: int = 26

    def __post_init__(self):
        idx = (self.neck_index, self.nose_index, self.left_eye_index, self.right_eye_index)
        if len(set(idx)) != 4:
            raise ValueError(f"joint map indices must be distinct, got {idx}")
        for i in idx:
            if not isinstance(i, (int, np.integer)) or not 0 <= i < N_JOINTS:
                raise ValueError(f"joint index {i!r} outside [0, {N_JOINTS})")

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: int(v) for k, v in (d or {}).items()})

    def to_dict(self):
        return {
            "neck_index": self.neck_index,
            "nose_index": self.nose_index,
            "left_eye_index": self.left_eye_index,
            "right_eye_index": self.right_eye_index,
        }


@dataclass(frozen=True)
class AgentFrame:
    joints: np.ndarray  # (45, 3), root-relative
    translation: np.ndarray  # (3,)
    bev_depth: float

    def __post_init__(self):
        object.__setattr__(self, "joints", np.asarray(self.joints, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        object.__setattr__(self, "bev_depth", float(self.bev_depth))

    def validate(self, clip_id=None, frame=None, agent=None):
        if self.joints.shape != (N_JOINTS, 3):
            raise PoseError(
                f"expected {N_JOINTS}x3 joints, got shape {self.joints.shape}",
                clip_id, frame, agent,
            )
        if self.translation.shape != (3,):
            raise PoseError("translation must have 3 components", clip_id, frame, agent)
        if not np.all(np.isfinite(self.joints)):
            raise PoseError("non-finite joint coordinate", clip_id, frame, agent)
        if not np.all(np.isfinite(self.translation)):
            raise PoseError("non-finite translation", clip_id, frame, agent)
        _check_depth(self.bev_depth, clip_id, frame, agent)


@dataclass
class JointTrack:
    """Per-frame joints of both agents in one clip.

    Stored as stacked arrays: ``joints`` (F, 2, 45, 3), ``translations``
    (F, 2, 3) and ``bev_depth`` (F, 2).
    """

    clip_id: str
    joints: np.ndarray
    translations: np.ndarray
    bev_depth: np.ndarray
    frame_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=float)
        self.translations = np.asarray(self.translations, dtype=float)
        self.bev_depth = np.asarray(self.bev_depth, dtype=float)
        f = self.joints.shape[0] if self.joints.ndim == 4 else 0
        if self.joints.ndim != 4 or self.joints.shape[1:] != (N_AGENTS, N_JOINTS, 3):
            raise PoseError(
                f"joints must be (frames, 2, 45, 3), got {self.joints.shape}", self.clip_id
            )
        if f < 1:
            raise PoseError("track has no frames", self.clip_id)
        if self.translations.shape != (f, N_AGENTS, 3):
            raise PoseError("translations must be (frames, 2, 3)", self.clip_id)
        if self.bev_depth.shape != (f, N_AGENTS):
            raise PoseError("bev_depth must be (frames, 2)", self.clip_id)
        if self.frame_ids is None:
            self.frame_ids = np.arange(f)

    @property
    def n_frames(self):
        return self.joints.shape[0]

    @classmethod
    def from_frames(cls, clip_id, frames):
        """Build a track from a list of ``(AgentFrame, AgentFrame)`` pairs."""
        frames = list(frames)
        for i, pair in enumerate(frames):
            if len(pair) != N_AGENTS:
                raise PoseError(f"expected 2 agents, got {len(pair)}", clip_id, i)
        return cls(
            clip_id=clip_id,
            joints=[[a.joints for a in pair] for pair in frames],
            translations=[[a.translation for a in pair] for pair in frames],
            bev_depth=[[a.bev_depth for a in pair] for pair in frames],
        )

    def agent_frame(self, frame, agent):
        return AgentFrame(
            self.joints[frame, agent], self.translations[frame, agent], self.bev_depth[frame, agent]
        )

    def swapped(self):
        """The same track with the two agents' input order exchanged."""
        return JointTrack(
            self.clip_id,
            self.joints[:, ::-1],
            self.translations[:, ::-1],
            self.bev_depth[:, ::-1],
            self.frame_ids,
        )


@dataclass(frozen=True)
class ClipFeature:
    clip_id: str
    kind: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "values", values)
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        want = FEATURE_WIDTHS.get(self.kind)
        if want is not None and values.size != want:
            raise ValueError(f"{self.kind} feature needs {want} values, got {values.size}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"non-finite values in {self.kind} feature of {self.clip_id}")


def _check_depth(bev_depth, clip_id=None, frame=None, agent=None):
    if not np.isfinite(bev_depth) or bev_depth <= 0:
        raise InvalidDepthError(
            f"bev_depth must be finite and > 0, got {bev_depth!r}", clip_id, frame, agent
        )


def fuse_depth(translation, bev_depth, clip_id=None, frame=None, agent=None):
    """Replace the depth (z) of a mesh-recovery camera translation by a metric depth."""
    _check_depth(bev_depth, clip_id, frame, agent)
    t = np.array(translation, dtype=float)
    t[2] = bev_depth
    return t


def absolute_joints(agent):
    """Root-relative joints of one ``AgentFrame`` moved into scene space."""
    agent.validate()
    return agent.joints + fuse_depth(agent.translation, agent.bev_depth)


def head_center(joints, jmap=JointMap()):
    joints = np.asarray(joints, dtype=float)
    return (joints[..., jmap.left_eye_index, :] + joints[..., jmap.right_eye_index, :]) / 2


def _raw_direction(joints, jmap):
    nose = joints[..., jmap.nose_index, :]
    neck = joints[..., jmap.neck_index, :]
    return ((nose - head_center(joints, jmap)) + (nose - neck)) / 2


def head_direction(joints, jmap=JointMap(), clip_id=None, frame=None, agent=None):
    """Unit head direction: mean of the head-center->nose and neck->nose vectors.

    The two vectors are averaged as-is and the average is normalized.
    """
    v = _raw_direction(np.asarray(joints, dtype=float), jmap)
    n = np.linalg.norm(v)
    if not n >= _DIRECTION_EPS:
        raise DegenerateDirectionError(
            f"head direction norm {n:.3g} below {_DIRECTION_EPS}", clip_id, frame, agent
        )
    return v / n


def _scene_joints(track):
    fused = track.translations.copy()
    fused[..., 2] = track.bev_depth
    return track.joints + fused[:, :, None, :]


def _frame_failures(track, jmap, with_direction):
    """Return (valid mask (F,), first failure or None) for every frame."""
    bad = ~np.isfinite(track.joints).all(axis=(2, 3))
    bad |= ~np.isfinite(track.translations).all(axis=2)
    depth_bad = ~(np.isfinite(track.bev_depth) & (track.bev_depth > 0))
    bad |= depth_bad
    dir_bad = np.zeros_like(bad)
    if with_direction:
        with np.errstate(invalid="ignore"):
            norms = np.linalg.norm(_raw_direction(_scene_joints(track), jmap), axis=-1)
        dir_bad = ~(norms >= _DIRECTION_EPS) & ~bad
        bad = bad | dir_bad
    first = None
    if bad.any():
        f, a = map(int, np.argwhere(bad)[0])
        fid = int(track.frame_ids[f])
        if depth_bad[f, a]:
            first = InvalidDepthError(
                f"bev_depth must be finite and > 0, got {track.bev_depth[f, a]!r}",
                track.clip_id, fid, a,
            )
        elif dir_bad[f, a]:
            first = DegenerateDirectionError("degenerate head direction", track.clip_id, fid, a)
        else:
            first = PoseError("non-finite joint or translation", track.clip_id, fid, a)
    return ~bad.any(axis=1), first


def _select_frames(track, jmap, min_coverage, with_direction):
    valid, first = _frame_failures(track, jmap, with_direction)
    coverage = valid.mean()
    if first is not None and (coverage < min_coverage or not valid.any()):
        raise ClipRejected(
            f"{first.reason}; {valid.sum()}/{valid.size} frames usable",
            first.clip_id, first.frame, first.agent,
        )
    return _scene_joints(track)[valid]


def canonical_order(mean_centers):
    """Agent order: ascending mean head-center x, then mean z, then input order."""
    c = np.asarray(mean_centers)
    return sorted(range(N_AGENTS), key=lambda a: (c[a, 0], c[a, 2], a))


def _social_frames(joints, jmap):
    centers = head_center(joints, jmap)
    raw = _raw_direction(joints, jmap)
    dirs = raw / np.linalg.norm(raw, axis=-1, keepdims=True)
    return centers, dirs


def clip_social_pose_3d(track, jmap=JointMap(), min_coverage=1.0):
    """Frame-averaged head center and head direction of both agents (12 values).

    Averaged directions are not renormalized.
    """
    joints = _select_frames(track, jmap, min_coverage, with_direction=True)
    centers, dirs = _social_frames(joints, jmap)
    mean_c = centers.mean(axis=0)
    mean_d = dirs.mean(axis=0)
    order = canonical_order(mean_c)
    values = np.concatenate([np.concatenate([mean_c[a], mean_d[a]]) for a in order])
    return ClipFeature(track.clip_id, "social3d", values)


def project_2d(feature):
    """Drop z and dz from a social3d feature; (dx, dy) keeps its 3D scale."""
    if feature.values.size != FEATURE_WIDTHS["social3d"]:
        raise ValueError("project_2d expects a 12-value social3d feature")
    return ClipFeature(feature.clip_id, "social2d", feature.values[_KEEP_2D])


def clip_joint_feature(track, jmap=JointMap(), min_coverage=1.0):
    """Frame-averaged scene-space joints of both agents (270 values)."""
    joints = _select_frames(track, jmap, min_coverage, with_direction=False)
    mean_j = joints.mean(axis=0)
    order = canonical_order(head_center(joints, jmap).mean(axis=0))
    return ClipFeature(track.clip_id, "joints3d", np.concatenate([mean_j[a].ravel() for a in order]))


def extract_features(track, jmap=JointMap(), min_coverage=1.0):
    """All three pose features for one clip, from one shared frame selection.

    Raises ``ClipRejected`` when the clip does not pass validation.
    """
    joints = _select_frames(track, jmap, min_coverage, with_direction=True)
    centers, dirs = _social_frames(joints, jmap)
    mean_c = centers.mean(axis=0)
    mean_d = dirs.mean(axis=0)
    order = canonical_order(mean_c)
    social = ClipFeature(
        track.clip_id,
        "social3d",
        np.concatenate([np.concatenate([mean_c[a], mean_d[a]]) for a in order]),
    )
    mean_j = joints.mean(axis=0)
    return {
        "joints3d": ClipFeature(
            track.clip_id, "joints3d", np.concatenate([mean_j[a].ravel() for a in order])
        ),
        "social3d": social,
        "social2d": project_2d(social),
    }
