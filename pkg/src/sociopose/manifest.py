"""Run manifest: config hash, input digests and per-stage output digests."""
import hashlib
import json
from pathlib import Path

from . import __version__

MANIFEST_NAME = "manifest.json"


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _rel(path, root):
    path, root = Path(path).resolve(), Path(root).resolve()
    try:
        return path.relative_to(root).as_posix()
    except ValueError:
        return path.name


def _input_key(path, cfg):
    # upstream stage products are keyed by their place in the run, not by
    # where the output directory happens to live
    try:
        return "output:" + Path(path).resolve().relative_to(cfg.output_dir.resolve()).as_posix()
    except ValueError:
        return _rel(path, cfg.base_dir)


def update_manifest(cfg, stage, inputs, outputs):
    """Record one stage's inputs and outputs; returns the manifest dict.

    The run id is derived from the config hash and the input digests, so an
    identical rerun writes an identical manifest.
    """
    out_dir = cfg.output_dir
    path = out_dir / MANIFEST_NAME
    if path.exists():
        manifest = json.loads(path.read_text())
    else:
        manifest = {"tool_version": __version__, "inputs": {}, "stages": {}}
    manifest["config_hash"] = cfg.hash()
    manifest["tool_version"] = __version__
    for p in inputs:
        p = Path(p)
        files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
        for q in files:
            manifest["inputs"][_input_key(q, cfg)] = file_digest(q)
    manifest["stages"][stage] = {_rel(p, out_dir): file_digest(p) for p in sorted(map(Path, outputs))}
    seed_material = manifest["config_hash"] + json.dumps(manifest["inputs"], sort_keys=True)
    manifest["run_id"] = hashlib.sha256(seed_material.encode()).hexdigest()[:16]
    out_dir.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
