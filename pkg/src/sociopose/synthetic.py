"""Synthetic dyadic scenes with known geometry.

Each clip holds two copies of a fixed 45-joint template. Each copy is
turned about the vertical axis and placed so that its head center sits at a
drawn position. Camera space uses x right, y down and z away from the
camera. At yaw 0 the template faces the camera, so its head direction is
(0, 0, -1). Mesh-recovery depth is simulated as wrong by a per-agent
relative bias, while ``bev_depth`` carries the true root depth, so exact
recovery of the geometry requires depth fusion.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .io import RatingTable, write_fmx, write_joint_csvs, write_rating_table, write_rows
from .pose_features import N_JOINTS, JointMap, JointTrack, head_center
from .seeding import rng_for

TEMPLATE_FORWARD = np.array([0.0, 0.0, -1.0])


def _template():
    j = np.zeros((N_JOINTS, 3))
    # SMPL body joints 0-23, pelvis at the origin
    body = {
        0: (0.0, 0.0, 0.0), 1: (0.09, 0.08, 0.0), 2: (-0.09, 0.08, 0.0), 3: (0.0, -0.12, 0.02),
        4: (0.10, 0.45, 0.01), 5: (-0.10, 0.45, 0.01), 6: (0.0, -0.25, 0.02),
        7: (0.10, 0.85, 0.04), 8: (-0.10, 0.85, 0.04), 9: (0.0, -0.30, 0.01),
        10: (0.11, 0.90, -0.08), 11: (-0.11, 0.90, -0.08), 12: (0.0, -0.50, 0.0),
        13: (0.08, -0.42, 0.0), 14: (-0.08, -0.42, 0.0), 15: (0.0, -0.60, 0.01),
        16: (0.18, -0.42, 0.01), 17: (-0.18, -0.42, 0.01), 18: (0.25, -0.17, 0.02),
        19: (-0.25, -0.17, 0.02), 20: (0.27, 0.08, 0.0), 21: (-0.27, 0.08, 0.0),
        22: (0.28, 0.16, -0.01), 23: (-0.28, 0.16, -0.01),
    }
    for i, p in body.items():
        j[i] = p
    # head landmarks: the nose sits halfway (in y) between the eye midpoint and
    # the neck, so the head direction is exactly horizontal
    j[24] = (0.0, -0.58, -0.10)  # nose
    j[25] = (0.032, -0.66, -0.07)  # left eye
    j[26] = (-0.032, -0.66, -0.07)  # right eye
    j[27] = (0.07, -0.63, 0.0)
    j[28] = (-0.07, -0.63, 0.0)
    # remaining landmarks (feet, hands) hang off the nearest body joints
    extra = {29: 10, 30: 10, 31: 7, 32: 11, 33: 11, 34: 8, 35: 22, 36: 22, 37: 22,
             38: 22, 39: 22, 40: 23, 41: 23, 42: 23, 43: 23, 44: 23}
    for k, (i, parent) in enumerate(extra.items()):
        j[i] = j[parent] + (0.01 * (k % 3 - 1), 0.03 + 0.005 * (k % 4), -0.02 * (k % 2))
    j.setflags(write=False)
    return j


TEMPLATE = _template()


def yaw_matrix(yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def direction_from_yaw(yaw):
    return yaw_matrix(yaw) @ TEMPLATE_FORWARD


@dataclass(frozen=True)
class SceneParams:
    n_clips: int = 100
    n_frames: int = 90
    x_ranges: tuple = ((-2.0, -0.5), (0.5, 2.0))
    y_ranges: tuple = ((-0.1, 0.1), (-0.1, 0.1))
    z_ranges: tuple = ((2.0, 8.0), (2.0, 8.0))
    yaw_ranges: tuple = ((-math.pi, math.pi), (-math.pi, math.pi))
    noise_sigma: float = 0.0
    depth_bias: float = 0.2
    min_separation: float = 0.3
    test_fraction: float = 0.2
    seed: int = 0
    max_retries: int = 100

    def __post_init__(self):
        if self.n_clips < 1 or self.n_frames < 1:
            raise ValueError("n_clips and n_frames must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 <= self.test_fraction < 1:
            raise ValueError("test_fraction must be in [0, 1)")

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        for k in ("x_ranges", "y_ranges", "z_ranges", "yaw_ranges"):
            if k in d:
                d[k] = tuple(tuple(float(v) for v in r) for r in d[k])
        return cls(**d)


@dataclass
class Placement:
    centers: np.ndarray  # (2, 3) head centers
    yaws: np.ndarray  # (2,)

    @property
    def directions(self):
        return np.array([direction_from_yaw(y) for y in self.yaws])


def analytic_targets(placement):
    """distance, facing and depth_gap of one placement.

    facing is the mean of the cosines between each agent's head direction and
    the direction toward the other agent.
    """
    c1, c2 = np.asarray(placement.centers, dtype=float)
    d1, d2 = placement.directions
    gap = c2 - c1
    dist = float(np.linalg.norm(gap))
    if dist < 1e-12:
        raise DataError("coincident head centers: facing is undefined")
    u = gap / dist
    cos1 = float(d1 @ u / np.linalg.norm(d1))
    cos2 = float(d2 @ -u / np.linalg.norm(d2))
    return {"distance": dist, "facing": 0.5 * (cos1 + cos2), "depth_gap": abs(float(c1[2] - c2[2]))}


TARGET_NAMES = ("distance", "facing", "depth_gap")


@dataclass
class SyntheticScene:
    params: SceneParams
    tracks: list
    placements: dict
    targets: dict
    splits: dict
    jmap: JointMap = field(default_factory=JointMap)

    @property
    def clip_ids(self):
        return [t.clip_id for t in self.tracks]

    def rating_table(self):
        ids = self.clip_ids
        vals = np.array([[self.targets[c][k] for k in TARGET_NAMES] for c in ids])
        return RatingTable(ids, [self.splits[c] for c in ids], TARGET_NAMES, vals)


def _draw_placement(rng, p):
    for _ in range(p.max_retries):
        centers = np.array([
            [rng.uniform(*p.x_ranges[a]), rng.uniform(*p.y_ranges[a]), rng.uniform(*p.z_ranges[a])]
            for a in range(2)
        ])
        yaws = np.array([rng.uniform(*p.yaw_ranges[a]) for a in range(2)])
        if np.linalg.norm(centers[0] - centers[1]) >= p.min_separation:
            return Placement(centers, yaws)
    raise DataError(f"no valid placement after {p.max_retries} draws")


def build_track(clip_id, placement, n_frames, rng=None, noise_sigma=0.0, depth_bias=(0.0, 0.0),
                template=TEMPLATE, jmap=JointMap()):
    """Joint track for one placement. ``depth_bias`` is the relative error of
    each agent's mesh-recovery depth."""
    hc = head_center(template, jmap)
    J = np.empty((n_frames, 2, N_JOINTS, 3))
    T = np.empty((n_frames, 2, 3))
    D = np.empty((n_frames, 2))
    for a in range(2):
        R = yaw_matrix(placement.yaws[a])
        rel = template @ R.T
        root = placement.centers[a] - R @ hc
        if root[2] <= 0:
            raise DataError(f"{clip_id}: agent {a} root depth {root[2]:.3f} is not positive")
        J[:, a] = rel
        T[:, a] = (root[0], root[1], root[2] * (1.0 + depth_bias[a]))
        D[:, a] = root[2]
    if noise_sigma > 0:
        J = J + rng.normal(0.0, noise_sigma, size=J.shape)
    return JointTrack(clip_id, J, T, D)


def gen_scene(params=SceneParams(), jmap=JointMap()):
    tracks, placements, targets, splits = [], {}, {}, {}
    width = len(str(params.n_clips - 1))
    for i in range(params.n_clips):
        cid = f"clip{i:0{width}d}"
        rng = rng_for(params.seed, "clip", i)
        pl = _draw_placement(rng, params)
        bias = rng.uniform(-params.depth_bias, params.depth_bias, size=2)
        tracks.append(build_track(cid, pl, params.n_frames, rng, params.noise_sigma, bias, jmap=jmap))
        placements[cid] = pl
        targets[cid] = analytic_targets(pl)
    ids = [t.clip_id for t in tracks]
    n_test = int(round(params.test_fraction * len(ids)))
    order = rng_for(params.seed, "split").permutation(len(ids))
    test = {ids[k] for k in order[:n_test]}
    splits = {c: ("test" if c in test else "train") for c in ids}
    return SyntheticScene(params, tracks, placements, targets, splits, jmap)


def gen_embeddings(scene, n_models=4, n_layers=2, dim=32, seed=0):
    """Stand-in network embeddings: noisy random linear read-outs of the
    scene geometry, noisier for some models and layers than others.

    Returns {model: {layer: (n_clips, dim) matrix}} in ``scene.clip_ids`` order.
    """
    ids = scene.clip_ids
    geo = np.array([
        np.concatenate([
            scene.placements[c].centers.ravel(),
            scene.placements[c].directions.ravel(),
            [scene.targets[c][k] for k in TARGET_NAMES],
        ])
        for c in ids
    ])
    geo = (geo - geo.mean(0)) / np.where(geo.std(0) > 0, geo.std(0), 1.0)
    out = {}
    for m in range(n_models):
        model = f"model{m:02d}"
        out[model] = {}
        for layer in range(n_layers):
            rng = rng_for(seed, "embedding", model, layer)
            A = rng.normal(size=(geo.shape[1], dim)) / math.sqrt(geo.shape[1])
            noise = 0.3 + 1.5 * rng.random()
            out[model][f"layer{layer:02d}"] = np.tanh(geo @ A) + noise * rng.normal(size=(len(ids), dim))
    return out


def gen_rater_rows(scene, n_raters=6, noise=0.5, seed=0):
    """Per-rater noisy copies of the analytic targets in long format."""
    rows = []
    for c in scene.clip_ids:
        rng = rng_for(seed, "raters", c)
        for k in TARGET_NAMES:
            for r in range(n_raters):
                rows.append((c, f"rater{r:02d}", k, scene.targets[c][k] + noise * rng.normal()))
    return rows


def write_scene(scene, out_dir, embeddings=None, rater_rows=None):
    """Write the scene as the pipeline's input files; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"joints": out / "joints.csv", "translations": out / "translations.csv"}
    write_joint_csvs(scene.tracks, paths["joints"], paths["translations"])
    ids = scene.clip_ids
    paths["targets"] = out / "targets.csv"
    write_rows(paths["targets"], ["clip_id", *TARGET_NAMES],
               ([c, *(scene.targets[c][k] for k in TARGET_NAMES)] for c in ids))
    paths["splits"] = out / "splits.csv"
    write_rows(paths["splits"], ["clip_id", "split"], ([c, scene.splits[c]] for c in ids))
    paths["ratings"] = out / "ratings.csv"
    write_rating_table(paths["ratings"], scene.rating_table())
    if embeddings:
        paths["embeddings"] = out / "embeddings"
        for model, layers in embeddings.items():
            for layer, X in layers.items():
                write_fmx(paths["embeddings"] / model / f"{layer}.fmx", ids, X)
    if rater_rows:
        paths["raters"] = out / "raters.csv"
        write_rows(paths["raters"], ["clip_id", "rater_id", "rating_dim", "value"], rater_rows)
    return paths
