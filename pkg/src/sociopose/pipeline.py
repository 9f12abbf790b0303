"""Pipeline stages behind the command line.

Every stage reads its inputs from the run config (and from earlier stages'
outputs under ``output_dir``), writes CSV files, and records them in the run
manifest. All joins are keyed by clip id and clip ids are processed in
sorted order, so row order in the inputs never matters.
"""
import fnmatch
import logging
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import io
from .config import RunConfig
from .errors import ClipRejected, ConfigError, DataError
from .grouped_ridge import grouped_evaluate, grouped_search
from .manifest import update_manifest
from .pose_features import extract_features
from .random_projection import project
from .ridge import check_disjoint, cv_select, evaluate
from .stats import (
    perm_test_paired,
    perm_test_unpaired,
    semipartial,
    split_half_reliability,
)
from .synthetic import gen_embeddings, gen_rater_rows, gen_scene, write_scene

logger = logging.getLogger(__name__)

POSE_KINDS = ("joints3d", "social3d", "social2d")


def _stage_dir(cfg, name):
    d = cfg.output_dir / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _need(path, stage):
    if not Path(path).exists():
        raise DataError(f"{path} not found; run the '{stage}' stage first")
    return Path(path)


# -- features -----------------------------------------------------------------


def run_features(cfg):
    if cfg.path("tracks_json") is not None:
        cfg.require_existing("tracks_json")
        inputs = [cfg.path("tracks_json")]
        tracks, rejected = io.read_joint_json(inputs[0])
    else:
        cfg.require_existing("joints", "translations")
        inputs = [cfg.path("joints"), cfg.path("translations")]
        tracks, rejected = io.read_joint_csvs(*inputs)
    min_cov = float(cfg.data["features"]["min_coverage"])
    rows = {k: [] for k in POSE_KINDS}
    for cid in sorted(tracks):
        try:
            feats = extract_features(tracks[cid], cfg.joint_map, min_cov)
        except ClipRejected as exc:
            rejected.append((cid, str(exc)))
            continue
        for k in POSE_KINDS:
            rows[k].append(feats[k])
    out = _stage_dir(cfg, "features")
    outputs = []
    for k in POSE_KINDS:
        p = out / f"{k}.csv"
        io.write_feature_csv(p, [f.clip_id for f in rows[k]], np.array([f.values for f in rows[k]]).reshape(len(rows[k]), -1))
        outputs.append(p)
    p = out / "rejections.csv"
    io.write_rows(p, ["clip_id", "reason"], sorted(rejected))
    outputs.append(p)
    if rejected:
        logger.warning("%d clips rejected, see %s", len(rejected), p)
    update_manifest(cfg, "features", inputs, outputs)
    return outputs


# -- shared loading -----------------------------------------------------------


def load_ratings(cfg):
    cfg.require_existing("ratings")
    return io.read_rating_table(cfg.path("ratings"), cfg.path("splits"))


def _rejected_ids(cfg):
    p = cfg.output_dir / "features" / "rejections.csv"
    if not p.exists():
        return set()
    _, rows = io.read_rows(p, ["clip_id"])
    return {r["clip_id"] for _, r in rows}


def analysis_split(cfg, table):
    """Sorted (train ids, test ids) after dropping rejected clips."""
    rejected = _rejected_ids(cfg)
    train = [c for c in table.ids_for("train") if c not in rejected]
    test = [c for c in table.ids_for("test") if c not in rejected]
    check_disjoint(train, test)
    if not train or not test:
        raise DataError("both train and test splits need clips")
    return train, test


def align(ids, X, wanted, name):
    index = {c: i for i, c in enumerate(ids)}
    missing = [c for c in wanted if c not in index]
    if missing:
        raise DataError(f"{name}: no rows for clip ids {missing[:10]}" + (" ..." if len(missing) > 10 else ""))
    return X[[index[c] for c in wanted]]


def load_pose_feature(cfg, kind):
    return io.read_feature_csv(_need(cfg.output_dir / "features" / f"{kind}.csv", "features"))


def discover_layers(cfg):
    """``{model: {layer: path}}`` from ``<embeddings_dir>/<model>/<layer>.fmx``."""
    root = cfg.path("embeddings_dir")
    if root is None:
        return {}
    if not root.is_dir():
        raise ConfigError(f"paths.embeddings_dir is not a directory: {root}")
    models = {}
    for mdir in sorted(p for p in root.iterdir() if p.is_dir()):
        layers = {p.stem: p for p in sorted(mdir.iterdir()) if p.suffix in (".fmx", ".csv")}
        if layers:
            models[mdir.name] = dict(sorted(layers.items()))
    return models


def _layer_matrix(cfg, path, ids):
    lids, X = io.read_matrix(path)
    X = align(lids, X, ids, str(path))
    return project(X, cfg.srp_config())


# -- encode -------------------------------------------------------------------


def run_encode(cfg):
    table = load_ratings(cfg)
    train, test = analysis_split(cfg, table)
    ids = train + test
    ntr = len(train)
    Y = table.targets(ids)
    rcfg = cfg.ridge_config()
    scores, selection_rows, pose_rows = [], [], []
    inputs = [cfg.path("ratings")] + ([cfg.path("splits")] if cfg.path("splits") else [])
    feature_dir = cfg.output_dir / "features"

    pose = {}
    for kind in POSE_KINDS:
        p = feature_dir / f"{kind}.csv"
        if not p.exists():
            continue
        fids, F = io.read_feature_csv(p)
        X = align(fids, F, ids, str(p))
        pose[kind] = X
        sel = cv_select([(kind, X[:ntr])], Y[:ntr], rcfg)
        scores += evaluate(X[:ntr], Y[:ntr], X[ntr:], Y[ntr:], sel.alphas, table.dims, kind, "",
                           train, test)
        selection_rows += [(kind, "", d, a, r) for d, a, r in zip(table.dims, sel.alphas, sel.cv_r)]

    models = discover_layers(cfg)
    if not pose and not models:
        raise DataError("nothing to encode: no pose features and no embeddings found")
    for model, layers in models.items():
        mats = {lid: _layer_matrix(cfg, path, ids) for lid, path in layers.items()}
        inputs += list(layers.values())
        sel = cv_select([(lid, X[:ntr]) for lid, X in mats.items()], Y[:ntr], rcfg)
        fs = f"dnn:{model}"
        by_layer = defaultdict(list)
        for j, lid in enumerate(sel.layer_ids):
            by_layer[lid].append(j)
        model_scores = {}
        for lid, cols in by_layer.items():
            X = mats[lid]
            dims = [table.dims[j] for j in cols]
            for s in evaluate(X[:ntr], Y[:ntr][:, cols], X[ntr:], Y[ntr:][:, cols],
                              [sel.alphas[j] for j in cols], dims, fs, lid, train, test):
                model_scores[s.rating_dim] = s
            for kind in ("social3d", "social2d"):
                if kind not in pose:
                    continue
                P = pose[kind]
                psel = cv_select([(lid, X[:ntr])], P[:ntr], rcfg)
                pscores = evaluate(X[:ntr], P[:ntr], X[ntr:], P[ntr:], psel.alphas,
                                   [f"{kind}_{i}" for i in range(P.shape[1])], fs, lid, train, test)
                r_pose = float(np.mean([s.r_test for s in pscores]))
                for d in dims:
                    pose_rows.append((model, d, lid, kind, r_pose))
        scores += [model_scores[d] for d in table.dims]
        selection_rows += [(fs, lid, d, a, r) for d, lid, a, r in zip(table.dims, sel.layer_ids, sel.alphas, sel.cv_r)]

    out = _stage_dir(cfg, "encode")
    outputs = [out / "encoding_scores.csv", out / "cv_selection.csv"]
    io.write_scores(outputs[0], scores)
    io.write_rows(outputs[1], ["feature_set", "layer", "rating_dim", "alpha", "cv_r"], selection_rows)
    if pose_rows:
        p = out / "pose_encoding_scores.csv"
        io.write_rows(p, ["model", "rating_dim", "layer", "pose_kind", "r_pose"], sorted(pose_rows))
        outputs.append(p)
    update_manifest(cfg, "encode", inputs, outputs)
    return outputs


# -- grouped ------------------------------------------------------------------


def _grouped_explicit(cfg, table, train, test, paths):
    ids = train + test
    ntr = len(train)
    Y = table.targets(ids)
    mats = []
    for p in paths:
        p = Path(p) if Path(p).is_absolute() else cfg.base_dir / p
        mats.append((p.stem, _layer_matrix(cfg, _need(p, "features"), ids)))
    res = grouped_search([(g, X[:ntr]) for g, X in mats], Y[:ntr], cfg.grouped_config())
    name = "+".join(g for g, _ in mats)
    return grouped_evaluate(res.model, [(g, X[ntr:]) for g, X in mats], Y[ntr:], table.dims, name, "",
                            train, test), [Path(p) for p in paths]


def _grouped_auto(cfg, table, train, test):
    ids = train + test
    ntr = len(train)
    Y = table.targets(ids)
    pose_kind = cfg.data["grouped"]["pose_group"]
    fids, F = load_pose_feature(cfg, pose_kind)
    P = align(fids, F, ids, pose_kind)
    sel_path = _need(cfg.output_dir / "encode" / "cv_selection.csv", "encode")
    _, rows = io.read_rows(sel_path, ["feature_set", "layer", "rating_dim"])
    best = defaultdict(dict)
    for _, r in rows:
        if r["feature_set"].startswith("dnn:"):
            best[r["feature_set"][4:]][r["rating_dim"]] = r["layer"]
    models = discover_layers(cfg)
    scores, inputs = [], []
    gcfg = cfg.grouped_config()
    for model in sorted(best):
        if model not in models:
            raise DataError(f"model {model!r} from encode stage not found under embeddings_dir")
        by_layer = defaultdict(list)
        for j, d in enumerate(table.dims):
            by_layer[best[model][d]].append(j)
        found = {}
        for lid, cols in sorted(by_layer.items()):
            inputs.append(models[model][lid])
            X = _layer_matrix(cfg, models[model][lid], ids)
            res = grouped_search([(lid, X[:ntr]), (pose_kind, P[:ntr])], Y[:ntr][:, cols], gcfg)
            for s in grouped_evaluate(res.model, [(lid, X[ntr:]), (pose_kind, P[ntr:])], Y[ntr:][:, cols],
                                      [table.dims[j] for j in cols], f"dnn:{model}+{pose_kind}", lid,
                                      train, test):
                found[s.rating_dim] = s
        scores += [found[d] for d in table.dims]
    return scores, inputs


def run_encode_grouped(cfg):
    table = load_ratings(cfg)
    train, test = analysis_split(cfg, table)
    groups = cfg.data["grouped"]["groups"]
    if groups:
        if len(groups) < 2:
            raise ConfigError("grouped.groups needs at least 2 feature files")
        scores, inputs = _grouped_explicit(cfg, table, train, test, groups)
    else:
        scores, inputs = _grouped_auto(cfg, table, train, test)
    out = _stage_dir(cfg, "grouped") / "grouped_scores.csv"
    io.write_scores(out, scores, with_gamma=True)
    update_manifest(cfg, "encode-grouped", [cfg.path("ratings")] + inputs, [out])
    return [out]


# -- semipartial ----------------------------------------------------------------


def run_semipartial(cfg):
    sp = cfg.data["semipartial"]
    table = load_ratings(cfg)
    train, test = analysis_split(cfg, table)
    ids = train + test
    Y = table.targets(ids)
    fids, F = load_pose_feature(cfg, sp["full"])
    full = align(fids, F, ids, sp["full"])
    cids, C = load_pose_feature(cfg, sp["control_source"])
    source = align(cids, C, ids, sp["control_source"])
    controls = [("none", [])] + list(sp["controls"].items())
    rcfg = cfg.ridge_config()
    tr = np.arange(len(train))
    te = np.arange(len(train), len(ids))
    rows = []
    for name, cols in controls:
        if any(not 0 <= c < source.shape[1] for c in cols):
            raise ConfigError(f"semipartial control {name!r} has columns outside [0, {source.shape[1]})")
        res = semipartial(source[:, cols], full, Y, tr, te, rcfg, table.dims, name, ids)
        for d, r, ap, dg in zip(res.rating_dims, res.r_semi, res.alpha_predictor, res.degenerate):
            rows.append((name, d, r, res.alpha_residualizer, ap, dg))
    out = _stage_dir(cfg, "semipartial") / "semipartial.csv"
    io.write_rows(out, ["control", "rating_dim", "r_semi", "alpha_residualizer", "alpha_predictor", "degenerate"], rows)
    update_manifest(cfg, "semipartial", [cfg.path("ratings")], [out])
    return [out]


# -- permutation tests -----------------------------------------------------------


def _matches(name, patterns):
    return any(fnmatch.fnmatchcase(name, p) for p in patterns)


def run_permtest(cfg):
    pt = cfg.data["permtest"]
    mode = pt["mode"]
    if mode not in ("unpaired", "paired", "both"):
        raise ConfigError(f"permtest.mode must be unpaired, paired or both, got {mode!r}")
    n_perm = int(pt["n_perm"])
    enc_path = _need(cfg.output_dir / "encode" / "encoding_scores.csv", "encode")
    enc = io.read_scores(enc_path)
    inputs = [enc_path]
    dims = list(dict.fromkeys(r["rating_dim"] for r in enc))
    rows = []
    if mode in ("unpaired", "both"):
        for d in dims:
            a = [r["r_test"] for r in enc if r["rating_dim"] == d and _matches(r["feature_set"], pt["unpaired_a"])]
            b = [r["r_test"] for r in enc if r["rating_dim"] == d and _matches(r["feature_set"], pt["unpaired_b"])
                 and "+" not in r["feature_set"]]
            if not a or not b:
                logger.warning("unpaired test for %s skipped: empty group", d)
                continue
            name = f"unpaired:{'|'.join(pt['unpaired_a'])}-vs-{'|'.join(pt['unpaired_b'])}:{d}"
            seed = cfg.stage_seed("permtest", name)
            res = perm_test_unpaired(a, b, n_perm, seed)
            rows.append((name, res.observed, res.p_value, res.n_permutations, seed, res.exhaustive))
    if mode in ("paired", "both"):
        grp_path = _need(cfg.output_dir / "grouped" / "grouped_scores.csv", "encode-grouped")
        inputs.append(grp_path)
        grp = {(r["feature_set"], r["rating_dim"]): r["r_test"] for r in io.read_scores(grp_path)}
        suffix = pt["paired_suffix"]
        for d in dims:
            alone = {r["feature_set"]: r["r_test"] for r in enc if r["rating_dim"] == d
                     and r["feature_set"].startswith("dnn:")}
            augmented = {fs[: -len(suffix)] for fs, dd in grp if dd == d and fs.endswith(suffix)}
            unmatched = sorted(set(alone) ^ augmented)
            if unmatched:
                raise DataError(f"paired test on {d}: models without a partner score: {unmatched}")
            if not alone:
                logger.warning("paired test for %s skipped: no models", d)
                continue
            diffs = [alone[m] - grp[(m + suffix, d)] for m in sorted(alone)]
            name = f"paired:dnn-vs-dnn{suffix}:{d}"
            seed = cfg.stage_seed("permtest", name)
            res = perm_test_paired(diffs, n_perm, seed)
            rows.append((name, res.observed, res.p_value, res.n_permutations, seed, res.exhaustive))
    out = _stage_dir(cfg, "permtest") / "permtest.csv"
    io.write_rows(out, io.PERM_HEADER, rows)
    update_manifest(cfg, "permtest", inputs, [out])
    return [out]


# -- reliability ---------------------------------------------------------------


def run_reliability(cfg):
    cfg.require_existing("raters")
    tables = io.read_rater_table(cfg.path("raters"))
    n_splits = int(cfg.data["reliability"]["n_splits"])
    rows = []
    for dim in sorted(tables):
        _, M = tables[dim]
        res = split_half_reliability(M, n_splits, cfg.stage_seed("reliability", dim), dim)
        rows.append((dim, res.r_split_half, res.n_splits, res.spearman_brown, res.n_clips))
    out = _stage_dir(cfg, "reliability") / "reliability.csv"
    io.write_rows(out, ["rating_dim", "r_split_half", "n_splits", "spearman_brown", "n_clips"], rows)
    update_manifest(cfg, "reliability", [cfg.path("raters")], [out])
    return [out]


# -- synthetic data ------------------------------------------------------------


def run_synth(cfg):
    """Write a synthetic dataset plus a config that runs the pipeline on it."""
    s = cfg.data["synth"]
    params = cfg.scene_params()
    scene = gen_scene(params, cfg.joint_map)
    emb = gen_embeddings(scene, int(s["n_models"]), int(s["n_layers"]), int(s["embedding_dim"]),
                         params.seed) if int(s["n_models"]) > 0 else None
    raters = gen_rater_rows(scene, int(s["n_raters"]), float(s["rater_noise"]), params.seed) \
        if int(s["n_raters"]) > 0 else None
    out = _stage_dir(cfg, "synth")
    paths = write_scene(scene, out, emb, raters)
    data = dict(cfg.data)
    data["paths"] = dict(data["paths"])
    data["paths"].update({
        "joints": "joints.csv",
        "translations": "translations.csv",
        "tracks_json": None,
        "ratings": "ratings.csv",
        "splits": None,
        "raters": "raters.csv" if raters else None,
        "embeddings_dir": "embeddings" if emb else None,
        "output_dir": "run",
    })
    RunConfig(data, out).dump(out / "config.yaml")
    outputs = [p for k, p in paths.items() if k != "embeddings"] + [out / "config.yaml"]
    if emb:
        outputs += sorted(paths["embeddings"].rglob("*.*"))
    update_manifest(cfg, "synth", [], outputs)
    return outputs
