"""Run configuration: one YAML or JSON file with nested sections.

Relative paths resolve against the directory of the config file. Values can
be overridden on the command line with ``--set section.key=value``, where
the value is parsed as YAML.
"""
import copy
import hashlib
import json
from pathlib import Path

import yaml

from .errors import ConfigError
from .grouped_ridge import GroupedSearchConfig
from .pose_features import JointMap
from .random_projection import SRPConfig
from .ridge import DEFAULT_ALPHAS, RidgeConfig
from .seeding import derive_seed
from .synthetic import SceneParams

DEFAULTS = {
    "seed": 0,
    "paths": {
        "joints": None,
        "translations": None,
        "tracks_json": None,
        "ratings": None,
        "splits": None,
        "raters": None,
        "embeddings_dir": None,
        "output_dir": "out",
    },
    "joint_map": JointMap().to_dict(),
    "features": {"min_coverage": 1.0},
    "ridge": {"alpha_grid": list(DEFAULT_ALPHAS), "n_folds": 5, "n_repeats": 2},
    "grouped": {
        "n_candidates": 200,
        "concentrations": [0.1, 1.0],
        "groups": [],
        "pose_group": "social3d",
    },
    "srp": {"epsilon": 0.1, "target_dim": 4732},
    "semipartial": {
        "full": "joints3d",
        "control_source": "social3d",
        "controls": {
            "positions": [0, 1, 2, 6, 7, 8],
            "directions": [3, 4, 5, 9, 10, 11],
            "combined": list(range(12)),
        },
    },
    "permtest": {
        "n_perm": 5000,
        "mode": "both",
        "unpaired_a": ["joints3d"],
        "unpaired_b": ["dnn:*"],
        "paired_suffix": "+social3d",
    },
    "reliability": {"n_splits": 100},
    "report": {"figures": ["fig2", "fig3", "fig4", "fig5", "figS1"]},
    "synth": {
        "scene": {},
        "n_models": 4,
        "n_layers": 2,
        "embedding_dim": 32,
        "n_raters": 6,
        "rater_noise": 0.5,
    },
}

PATH_KEYS = tuple(DEFAULTS["paths"])
SECTION_WIDTHS = {"positions": 6, "directions": 6, "combined": 12}


def _merge(base, over, where=""):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k}")
        if isinstance(base[k], dict) and k not in ("scene", "controls"):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k} must be a mapping")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_override(data, assignment):
    """Apply one ``a.b.c=value`` override in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config section {key!r}")
        node = node[p]
    if parts[-1] not in node and parts[0] not in ("synth",):
        raise ConfigError(f"unknown config key {key!r}")
    try:
        node[parts[-1]] = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc


class RunConfig:
    """Validated run configuration with typed accessors for each section."""

    def __init__(self, data=None, base_dir="."):
        self.base_dir = Path(base_dir)
        self.data = _merge(DEFAULTS, data or {})
        try:
            self.seed = int(self.data["seed"])
            self.joint_map = JointMap.from_dict(self.data["joint_map"])
            self.ridge_config()
            self.grouped_config()
            self.srp_config()
            self.scene_params()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
        for name, cols in self.data["semipartial"]["controls"].items():
            want = SECTION_WIDTHS.get(name)
            if want is not None and len(cols) != want:
                raise ConfigError(f"semipartial control {name!r} needs {want} columns, got {len(cols)}")

    @classmethod
    def load(cls, path, overrides=()):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        data = _merge(DEFAULTS, data or {})
        for ov in overrides:
            apply_override(data, ov)
        return cls(data, path.parent)

    def dump(self, path):
        path = Path(path)
        text = json.dumps(self.data, indent=2) if path.suffix == ".json" else yaml.safe_dump(self.data, sort_keys=True)
        path.write_text(text)

    def path(self, key, required=False):
        v = self.data["paths"].get(key)
        if v is None:
            if required:
                raise ConfigError(f"paths.{key} is not set")
            return None
        p = Path(v)
        return p if p.is_absolute() else self.base_dir / p

    def require_existing(self, *keys):
        for k in keys:
            p = self.path(k, required=True)
            if not p.exists():
                raise ConfigError(f"paths.{k} does not exist: {p}")

    @property
    def output_dir(self):
        return self.path("output_dir", required=True)

    def stage_seed(self, stage, *items):
        return derive_seed(self.seed, stage, *items)

    def ridge_config(self):
        r = self.data["ridge"]
        return RidgeConfig(tuple(r["alpha_grid"]), int(r["n_folds"]), int(r["n_repeats"]), self.stage_seed("cv"))

    def grouped_config(self):
        g, r = self.data["grouped"], self.data["ridge"]
        return GroupedSearchConfig(
            int(g["n_candidates"]), tuple(g["concentrations"]), tuple(r["alpha_grid"]),
            int(r["n_folds"]), int(r["n_repeats"]), self.stage_seed("cv"),
        )

    def srp_config(self):
        s = self.data["srp"]
        return SRPConfig(float(s["epsilon"]), int(s["target_dim"]), self.stage_seed("srp"))

    def scene_params(self):
        scene = dict(self.data["synth"]["scene"])
        scene.setdefault("seed", self.stage_seed("synth"))
        return SceneParams.from_dict(scene)

    def hash(self):
        """sha256 of the canonical config, ignoring where outputs are written."""
        d = copy.deepcopy(self.data)
        d["paths"].pop("output_dir", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()
