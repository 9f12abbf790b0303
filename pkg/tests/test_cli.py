import json
import random
import shutil

import numpy as np
import pytest

from sociopose import io
from sociopose.cli import main
from sociopose.stats import score_relationship

STAGES = ["features", "encode", "encode-grouped", "semipartial", "permtest", "reliability", "report"]
FAST = ["--set", "grouped.n_candidates=10", "--set", "permtest.n_perm=200", "--set", "reliability.n_splits=10"]


def synth(root, *extra):
    args = ["synth", "--output", str(root), "--set", "synth.scene={n_clips: 40, n_frames: 2}",
            "--set", "synth.n_models=3", *extra]
    assert main(args) == 0
    return root / "synth" / "config.yaml"


def run_all(config, *extra, stages=STAGES):
    for s in stages:
        assert main([s, "--config", str(config), *FAST, *extra]) == 0, s


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = synth(root)
    run_all(config)
    return config


def test_all_stage_outputs(dataset):
    out = dataset.parent / "run"
    for rel in ["features/joints3d.csv", "features/social3d.csv", "features/social2d.csv",
                "features/rejections.csv", "encode/encoding_scores.csv", "grouped/grouped_scores.csv",
                "semipartial/semipartial.csv", "permtest/permtest.csv", "reliability/reliability.csv",
                "report/fig2.csv", "report/fig5.csv", "report/figS1.csv", "manifest.json"]:
        assert (out / rel).exists(), rel
    _, rows = io.read_rows(out / "features" / "rejections.csv")
    assert rows == []
    header = (out / "features" / "social3d.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 13
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["stages"]) >= {"features", "encode", "encode-grouped", "report"}
    assert manifest["stages"]["encode"]["encode/encoding_scores.csv"]


def test_report_schema(dataset):
    out = dataset.parent / "run" / "report"
    _, rows = io.read_rows(out / "fig2.csv", ["rating_dim", "kind", "label", "r"])
    kinds = [(r["kind"], r["label"]) for _, r in rows if r["rating_dim"] == "facing"]
    assert ("bar", "dnn_mean") in kinds and ("bar", "joints3d") in kinds
    assert sum(k == "dot" for k, _ in kinds) == 3
    _, rows = io.read_rows(out / "fig5.csv")
    for d in ("facing", "distance"):
        pts = [(float(r["x_rating_r"]), float(r["y_pose_r"])) for _, r in rows
               if r["row_type"] == "point" and r["rating_dim"] == d and r["pose_kind"] == "social3d"]
        (foot,) = [float(r["y_pose_r"]) for _, r in rows
                   if r["row_type"] == "r" and r["rating_dim"] == d and r["pose_kind"] == "social3d"]
        assert foot == score_relationship(pts)


def test_grouped_gamma_column(dataset):
    text = (dataset.parent / "run" / "grouped" / "grouped_scores.csv").read_text().splitlines()
    assert text[0].endswith(",gamma")
    g = text[1].split(",")[-1]
    weights = [float(p.split(":")[1]) for p in g.split(";")]
    assert len(weights) == 2 and abs(sum(weights) - 1) < 1e-12


def test_semipartial_none_matches_plain(dataset):
    out = dataset.parent / "run"
    _, rows = io.read_rows(out / "semipartial" / "semipartial.csv")
    none = {r["rating_dim"]: float(r["r_semi"]) for _, r in rows if r["control"] == "none"}
    plain = {s["rating_dim"]: s["r_test"] for s in io.read_scores(out / "encode" / "encoding_scores.csv")
             if s["feature_set"] == "joints3d"}
    assert none == plain


def test_row_order_invariance(dataset, tmp_path):
    src = dataset.parent
    dst = tmp_path / "shuffled"
    shutil.copytree(src, dst, ignore=shutil.ignore_patterns("run"))
    rnd = random.Random(0)
    for name in ("ratings.csv", "joints.csv", "translations.csv"):
        lines = (dst / name).read_text().splitlines()
        body = lines[1:]
        rnd.shuffle(body)
        (dst / name).write_text("\n".join([lines[0], *body]) + "\n")
    run_all(dst / "config.yaml", stages=["features", "encode"])
    for rel in ("features/social3d.csv", "encode/encoding_scores.csv", "encode/cv_selection.csv"):
        assert (dst / "run" / rel).read_bytes() == (src / "run" / rel).read_bytes(), rel


def test_test_rows_never_touch_training_artifacts(dataset, tmp_path):
    src = dataset.parent
    dst = tmp_path / "perturbed"
    shutil.copytree(src, dst, ignore=shutil.ignore_patterns("run"))
    table = io.read_rating_table(dst / "ratings.csv")
    test = set(table.ids_for("test"))
    table.values[[i for i, c in enumerate(table.ids) if c in test]] *= -3
    io.write_rating_table(dst / "ratings.csv", table)
    for p in (dst / "embeddings").rglob("*.fmx"):
        ids, X = io.read_fmx(p)
        X[[i for i, c in enumerate(ids) if c in test]] = 5.0
        io.write_fmx(p, ids, X)
    run_all(dst / "config.yaml", stages=["features", "encode"])
    a = (src / "run" / "encode" / "cv_selection.csv").read_bytes()
    assert (dst / "run" / "encode" / "cv_selection.csv").read_bytes() == a
    assert (dst / "run" / "encode" / "encoding_scores.csv").read_bytes() != \
        (src / "run" / "encode" / "encoding_scores.csv").read_bytes()


def test_leakage_is_fatal(dataset, tmp_path):
    dst = tmp_path / "leak"
    shutil.copytree(dataset.parent, dst, ignore=shutil.ignore_patterns("run"))
    lines = (dst / "ratings.csv").read_text().splitlines()
    first_test = next(l for l in lines[1:] if ",test," in l)
    dup = first_test.replace(",test,", ",train,")
    (dst / "ratings.csv").write_text("\n".join(lines + [dup]) + "\n")
    assert main(["features", "--config", str(dst / "config.yaml")]) == 0
    assert main(["encode", "--config", str(dst / "config.yaml")]) == 3


def test_corrupt_frame_rejects_clip(dataset, tmp_path):
    dst = tmp_path / "corrupt"
    shutil.copytree(dataset.parent, dst, ignore=shutil.ignore_patterns("run"))
    lines = (dst / "translations.csv").read_text().splitlines()
    parts = lines[3].split(",")
    victim = parts[0]
    parts[-1] = "-1.0"
    lines[3] = ",".join(parts)
    (dst / "translations.csv").write_text("\n".join(lines) + "\n")
    assert main(["features", "--config", str(dst / "config.yaml")]) == 0
    _, rows = io.read_rows(dst / "run" / "features" / "rejections.csv")
    assert [r["clip_id"] for _, r in rows] == [victim]
    assert "bev_depth" in rows[0][1]["reason"]
    ids, _ = io.read_feature_csv(dst / "run" / "features" / "social3d.csv")
    assert victim not in ids and len(ids) == 39
    assert main(["encode", "--config", str(dst / "config.yaml")]) == 0


def test_exit_codes(dataset, tmp_path, caplog):
    cfg = str(dataset)
    assert main(["encode"]) == 2
    assert main(["encode", "--config", str(tmp_path / "none.yaml")]) == 2
    assert main(["encode", "--config", cfg, "--set", "ridge.bogus=1"]) == 2
    assert main(["semipartial", "--config", cfg, "--set", "semipartial.controls={positions: [0]}"]) == 2
    dst = tmp_path / "bad"
    shutil.copytree(dataset.parent, dst, ignore=shutil.ignore_patterns("run"))
    lines = (dst / "joints.csv").read_text().splitlines()
    lines[5] = lines[5].rsplit(",", 1)[0] + ",xyz"
    (dst / "joints.csv").write_text("\n".join(lines) + "\n")
    assert main(["features", "--config", str(dst / "config.yaml")]) == 3
    assert "joints.csv:6" in caplog.text
    # missing upstream stage
    fresh = tmp_path / "fresh"
    shutil.copytree(dataset.parent, fresh, ignore=shutil.ignore_patterns("run"))
    assert main(["report", "--config", str(fresh / "config.yaml")]) == 3
    # non-finite embeddings are a numerical failure
    for p in (fresh / "embeddings").rglob("*.fmx"):
        ids, X = io.read_fmx(p)
        X[:, 0] = np.nan
        io.write_fmx(p, ids, X)
    assert main(["encode", "--config", str(fresh / "config.yaml")]) == 4


def test_empty_model_set_gives_header_only_report(tmp_path):
    config = synth(tmp_path, "--set", "synth.n_models=0")
    for s in ["features", "encode", "semipartial", "report"]:
        args = [s, "--config", str(config), "--set", "report.figures=[fig2, fig3, fig5, figS1]"]
        assert main(args) == 0, s
    fig5 = (config.parent / "run" / "report" / "fig5.csv").read_text().splitlines()
    assert fig5 == ["row_type,rating_dim,pose_kind,model,x_rating_r,y_pose_r"]
