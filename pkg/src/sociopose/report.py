"""Tidy per-figure CSVs built from earlier stage outputs.

Only the numbers behind each figure are written, no plots:

* ``fig2.csv``  network mean vs full joints, per-model dots, reliability
* ``fig3.csv``  joints3d vs social3d vs social2d, reliability
* ``fig4.csv``  networks alone vs networks plus pose features, per model
* ``fig5.csv``  per-model (rating r, pose r) pairs with the across-model r as footer rows
* ``figS1.csv`` plain joints r and semi-partial r per control set
"""
import logging
from collections import defaultdict

import numpy as np

from . import io
from .errors import ConfigError, DataError
from .manifest import update_manifest
from .stats import score_relationship

logger = logging.getLogger(__name__)

BAR_HEADER = ["rating_dim", "kind", "label", "r"]
FIG5_HEADER = ["row_type", "rating_dim", "pose_kind", "model", "x_rating_r", "y_pose_r"]
FIGURES = ("fig2", "fig3", "fig4", "fig5", "figS1")


def _load(cfg, rel, stage):
    p = cfg.output_dir / rel
    if not p.exists():
        raise DataError(f"{p} not found; run the '{stage}' stage first")
    return p


def _reliability_rows(cfg):
    p = cfg.output_dir / "reliability" / "reliability.csv"
    if not p.exists():
        return []
    _, rows = io.read_rows(p, ["rating_dim", "r_split_half"])
    return [(r["rating_dim"], "reliability", "split_half", float(r["r_split_half"])) for _, r in rows]


def _dims(scores):
    return list(dict.fromkeys(s["rating_dim"] for s in scores))


def fig2_rows(enc, reliability):
    rows = []
    for d in _dims(enc):
        dnn = [s for s in enc if s["rating_dim"] == d and s["feature_set"].startswith("dnn:")]
        if dnn:
            rows.append((d, "bar", "dnn_mean", float(np.mean([s["r_test"] for s in dnn]))))
        rows += [(d, "bar", s["feature_set"], s["r_test"]) for s in enc
                 if s["rating_dim"] == d and s["feature_set"] == "joints3d"]
        rows += [(d, "dot", s["feature_set"], s["r_test"]) for s in dnn]
    return rows + reliability


def fig3_rows(enc, reliability):
    rows = [(s["rating_dim"], "bar", s["feature_set"], s["r_test"]) for s in enc
            if s["feature_set"] in ("joints3d", "social3d", "social2d")]
    return rows + reliability


def fig4_rows(enc, grp, suffix, reliability):
    rows = []
    for d in _dims(enc):
        alone = {s["feature_set"]: s["r_test"] for s in enc
                 if s["rating_dim"] == d and s["feature_set"].startswith("dnn:")}
        both = {s["feature_set"][: -len(suffix)]: s["r_test"] for s in grp
                if s["rating_dim"] == d and s["feature_set"].endswith(suffix)}
        models = sorted(set(alone) & set(both))
        if models:
            rows.append((d, "bar", "dnn_alone", float(np.mean([alone[m] for m in models]))))
            rows.append((d, "bar", "dnn_plus_pose", float(np.mean([both[m] for m in models]))))
            rows.append((d, "delta", "dnn_plus_pose_minus_alone",
                         float(np.mean([both[m] - alone[m] for m in models]))))
        for m in models:
            rows.append((d, "dot_alone", m, alone[m]))
            rows.append((d, "dot_plus_pose", m, both[m]))
    return rows + reliability


def fig5_rows(enc, pose_rows):
    """Data rows and footer rows (one r per rating dim x pose kind)."""
    rating_r = {(s["feature_set"][4:], s["rating_dim"]): s["r_test"] for s in enc
                if s["feature_set"].startswith("dnn:")}
    points = defaultdict(list)
    for r in pose_rows:
        key = (r["model"], r["rating_dim"])
        if key in rating_r:
            points[(r["rating_dim"], r["pose_kind"])].append((r["model"], rating_r[key], float(r["r_pose"])))
    rows, footer = [], []
    for (d, kind), pts in sorted(points.items()):
        pts.sort()
        rows += [("point", d, kind, m, x, y) for m, x, y in pts]
        if len(pts) >= 2:
            footer.append(("r", d, kind, "", "", score_relationship([(x, y) for _, x, y in pts])))
    return rows, footer


def figS1_rows(enc, semi):
    rows = [(s["rating_dim"], "bar", "joints3d", s["r_test"]) for s in enc if s["feature_set"] == "joints3d"]
    rows += [(r["rating_dim"], "semipartial", r["control"], float(r["r_semi"])) for r in semi]
    return rows


def run_report(cfg):
    figures = cfg.data["report"]["figures"]
    unknown = [f for f in figures if f not in FIGURES]
    if unknown:
        raise ConfigError(f"unknown report figures {unknown}")
    enc_path = _load(cfg, "encode/encoding_scores.csv", "encode")
    enc = io.read_scores(enc_path)
    reliability = _reliability_rows(cfg)
    out = cfg.output_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    outputs, inputs = [], [enc_path]
    if not any(s["feature_set"].startswith("dnn:") for s in enc):
        logger.warning("no network models in encoding scores; model rows will be empty")
    for fig in figures:
        path = out / f"{fig}.csv"
        if fig == "fig2":
            io.write_rows(path, BAR_HEADER, fig2_rows(enc, reliability))
        elif fig == "fig3":
            io.write_rows(path, BAR_HEADER, fig3_rows(enc, reliability))
        elif fig == "fig4":
            gp = _load(cfg, "grouped/grouped_scores.csv", "encode-grouped")
            inputs.append(gp)
            suffix = cfg.data["permtest"]["paired_suffix"]
            io.write_rows(path, BAR_HEADER, fig4_rows(enc, io.read_scores(gp), suffix, reliability))
        elif fig == "fig5":
            pp = cfg.output_dir / "encode" / "pose_encoding_scores.csv"
            if pp.exists():
                inputs.append(pp)
                _, prs = io.read_rows(pp, ["model", "rating_dim", "pose_kind", "r_pose"])
                rows, footer = fig5_rows(enc, [r for _, r in prs])
            else:
                logger.warning("no pose encoding scores (needs models and pose features); fig5 is empty")
                rows, footer = [], []
            io.write_rows(path, FIG5_HEADER, rows, footer)
        elif fig == "figS1":
            sp = _load(cfg, "semipartial/semipartial.csv", "semipartial")
            inputs.append(sp)
            _, semi = io.read_rows(sp, ["control", "rating_dim", "r_semi"])
            io.write_rows(path, BAR_HEADER, figS1_rows(enc, [r for _, r in semi]))
        outputs.append(path)
    update_manifest(cfg, "report", [], outputs)
    return outputs
