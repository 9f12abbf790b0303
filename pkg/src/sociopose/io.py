"""File formats: joint tracks, feature matrices, rating tables, score tables.

Every numeric CSV value is written with ``repr`` so it reads back to the
same float.
"""
import csv
import json
import struct
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .pose_features import N_AGENTS, N_JOINTS, JointTrack

JOINT_HEADER = ["clip_id", "frame", "agent", "joint", "x", "y", "z"]
TRANSLATION_HEADER = ["clip_id", "frame", "agent", "tx", "ty", "tz", "bev_depth"]
SCORE_HEADER = ["feature_set", "layer", "rating_dim", "alpha", "r_test", "n_test"]
PERM_HEADER = ["test", "observed", "p", "n_perm", "seed", "exhaustive"]
RATER_HEADER = ["clip_id", "rater_id", "rating_dim", "value"]
FMX_MAGIC = b"FMX1"


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_rows(path, header, rows, footer=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
        for row in footer or ():
            w.writerow([fmt(v) for v in row])


def read_rows(path, required=None):
    """Return (header, list of (line_number, row dict))."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in (required or []) if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        rows = []
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}:{line_no}: expected {len(header)} fields, got {len(rec)}")
            rows.append((line_no, dict(zip(header, rec))))
    return header, rows


def _num(path, line_no, row, key, kind=float):
    try:
        return kind(row[key])
    except (TypeError, ValueError):
        raise DataError(f"{path}:{line_no}: bad {key} value {row[key]!r}") from None


# -- joint tracks -------------------------------------------------------------


def _collect_tracks(joint_records, trans_records, source):
    """Assemble tracks from parsed records.

    Returns (tracks by clip id, list of (clip_id, reason) rejections).
    """
    joints = defaultdict(dict)
    for where, clip, frame, agent, joint, xyz in joint_records:
        if not 0 <= agent < N_AGENTS:
            raise DataError(f"{where}: agent must be 0 or 1, got {agent}")
        if not 0 <= joint < N_JOINTS:
            raise DataError(f"{where}: joint must be in [0, {N_JOINTS}), got {joint}")
        key = (frame, agent, joint)
        if key in joints[clip]:
            raise DataError(f"{where}: duplicate row for clip {clip} frame {frame} agent {agent} joint {joint}")
        joints[clip][key] = xyz
    trans = defaultdict(dict)
    for where, clip, frame, agent, t in trans_records:
        if not 0 <= agent < N_AGENTS:
            raise DataError(f"{where}: agent must be 0 or 1, got {agent}")
        if (frame, agent) in trans[clip]:
            raise DataError(f"{where}: duplicate row for clip {clip} frame {frame} agent {agent}")
        trans[clip][(frame, agent)] = t
    only_j = sorted(set(joints) - set(trans))
    only_t = sorted(set(trans) - set(joints))
    if only_j or only_t:
        raise DataError(
            f"{source}: clip ids not aligned; joints only: {only_j[:10]}, translations only: {only_t[:10]}"
        )
    tracks, rejected = {}, []
    for clip in sorted(joints):
        jc, tc = joints[clip], trans[clip]
        frames = sorted({k[0] for k in jc} | {k[0] for k in tc})
        J = np.full((len(frames), N_AGENTS, N_JOINTS, 3), np.nan)
        T = np.full((len(frames), N_AGENTS, 4), np.nan)
        complete = True
        for fi, f in enumerate(frames):
            for a in range(N_AGENTS):
                if (f, a) not in tc:
                    rejected.append((clip, f"frame {f} agent {a}: missing translation row"))
                    complete = False
                    break
                T[fi, a] = tc[(f, a)]
                for j in range(N_JOINTS):
                    xyz = jc.get((f, a, j))
                    if xyz is None:
                        rejected.append((clip, f"frame {f} agent {a}: missing joint {j}"))
                        complete = False
                        break
                    J[fi, a, j] = xyz
                if not complete:
                    break
            if not complete:
                break
        if complete:
            tracks[clip] = JointTrack(clip, J, T[..., :3], T[..., 3], np.asarray(frames))
    return tracks, rejected


def read_joint_csvs(joints_path, translations_path):
    """Parse the joint CSV and its translation/depth companion.

    Unparseable rows raise ``DataError`` with the line number; clips with
    missing rows come back in the rejection list.
    """
    _, jrows = read_rows(joints_path, JOINT_HEADER)
    _, trows = read_rows(translations_path, TRANSLATION_HEADER)
    jrec = []
    for ln, r in jrows:
        where = f"{joints_path}:{ln}"
        jrec.append((
            where, r["clip_id"], _num(joints_path, ln, r, "frame", int), _num(joints_path, ln, r, "agent", int),
            _num(joints_path, ln, r, "joint", int),
            tuple(_num(joints_path, ln, r, k) for k in "xyz"),
        ))
    trec = []
    for ln, r in trows:
        where = f"{translations_path}:{ln}"
        trec.append((
            where, r["clip_id"], _num(translations_path, ln, r, "frame", int),
            _num(translations_path, ln, r, "agent", int),
            tuple(_num(translations_path, ln, r, k) for k in ("tx", "ty", "tz", "bev_depth")),
        ))
    return _collect_tracks(jrec, trec, f"{joints_path} / {translations_path}")


def read_joint_json(path):
    """Single-file variant: ``{"joints": [...], "translations": [...]}`` record lists
    with the same fields as the two CSV files."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot read JSON ({exc})") from exc
    if not isinstance(doc, dict) or "joints" not in doc or "translations" not in doc:
        raise DataError(f"{path}: expected an object with 'joints' and 'translations' lists")

    def field(rec, i, name, kind, section):
        try:
            return kind(rec[name])
        except (KeyError, TypeError, ValueError):
            raise DataError(f"{path}: {section}[{i}]: bad or missing {name!r}") from None

    jrec = [
        (f"{path}: joints[{i}]", str(field(r, i, "clip_id", str, "joints")),
         field(r, i, "frame", int, "joints"), field(r, i, "agent", int, "joints"),
         field(r, i, "joint", int, "joints"),
         tuple(field(r, i, k, float, "joints") for k in "xyz"))
        for i, r in enumerate(doc["joints"])
    ]
    trec = [
        (f"{path}: translations[{i}]", str(field(r, i, "clip_id", str, "translations")),
         field(r, i, "frame", int, "translations"), field(r, i, "agent", int, "translations"),
         tuple(field(r, i, k, float, "translations") for k in ("tx", "ty", "tz", "bev_depth")))
        for i, r in enumerate(doc["translations"])
    ]
    return _collect_tracks(jrec, trec, str(path))


def _joint_rows(tracks):
    for tr in tracks:
        for fi, f in enumerate(tr.frame_ids):
            for a in range(N_AGENTS):
                for j in range(N_JOINTS):
                    x, y, z = tr.joints[fi, a, j]
                    yield (tr.clip_id, int(f), a, j, float(x), float(y), float(z))


def _translation_rows(tracks):
    for tr in tracks:
        for fi, f in enumerate(tr.frame_ids):
            for a in range(N_AGENTS):
                tx, ty, tz = tr.translations[fi, a]
                yield (tr.clip_id, int(f), a, float(tx), float(ty), float(tz), float(tr.bev_depth[fi, a]))


def write_joint_csvs(tracks, joints_path, translations_path):
    tracks = list(tracks)
    write_rows(joints_path, JOINT_HEADER, _joint_rows(tracks))
    write_rows(translations_path, TRANSLATION_HEADER, _translation_rows(tracks))


def write_joint_json(tracks, path):
    tracks = list(tracks)
    doc = {
        "joints": [dict(zip(JOINT_HEADER, r)) for r in _joint_rows(tracks)],
        "translations": [dict(zip(TRANSLATION_HEADER, r)) for r in _translation_rows(tracks)],
    }
    Path(path).write_text(json.dumps(doc))


# -- feature matrices ---------------------------------------------------------


def write_feature_csv(path, ids, X):
    X = np.asarray(X, dtype=float)
    header = ["clip_id"] + [f"f{i}" for i in range(X.shape[1])]
    write_rows(path, header, ([cid, *row] for cid, row in zip(ids, X.tolist())))


def read_feature_csv(path):
    header, rows = read_rows(path, ["clip_id"])
    cols = header[1:]
    if header[0] != "clip_id" or cols != [f"f{i}" for i in range(len(cols))]:
        raise DataError(f"{path}: header must be clip_id,f0,...,f{{d-1}}")
    ids = []
    X = np.empty((len(rows), len(cols)))
    for i, (ln, r) in enumerate(rows):
        ids.append(r["clip_id"])
        X[i] = [_num(path, ln, r, c) for c in cols]
    _check_unique(ids, path)
    return ids, X


def _ids_path(path):
    path = Path(path)
    return path.with_suffix(".ids")


def write_fmx(path, ids, X):
    """``FMX1`` + u32 rows + u32 cols (little-endian) + row-major float32; ids in ``.ids``."""
    X = np.asarray(X, dtype="<f4")
    if X.ndim != 2 or len(ids) != X.shape[0]:
        raise DataError("fmx needs a 2-D matrix with one id per row")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(FMX_MAGIC)
        fh.write(struct.pack("<II", X.shape[0], X.shape[1]))
        fh.write(np.ascontiguousarray(X).tobytes())
    _ids_path(path).write_text("".join(f"{i}\n" for i in ids))


def read_fmx(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if raw[:4] != FMX_MAGIC:
        raise DataError(f"{path}: not an FMX1 file")
    if len(raw) < 12:
        raise DataError(f"{path}: truncated header")
    n, d = struct.unpack("<II", raw[4:12])
    if len(raw) != 12 + 4 * n * d:
        raise DataError(f"{path}: expected {n}x{d} float32 payload, got {len(raw) - 12} bytes")
    X = np.frombuffer(raw, dtype="<f4", offset=12).reshape(n, d).astype(float)
    ids_file = _ids_path(path)
    if not ids_file.exists():
        raise DataError(f"{path}: missing id sidecar {ids_file.name}")
    ids = ids_file.read_text().splitlines()
    if len(ids) != n:
        raise DataError(f"{ids_file}: {len(ids)} ids for {n} rows")
    _check_unique(ids, ids_file)
    return ids, X


def read_matrix(path):
    path = Path(path)
    if path.suffix == ".fmx":
        return read_fmx(path)
    return read_feature_csv(path)


def _check_unique(ids, where):
    seen = set()
    dup = [i for i in ids if i in seen or seen.add(i)]
    if dup:
        raise DataError(f"{where}: duplicate clip ids {sorted(set(dup))[:10]}")


# -- ratings ------------------------------------------------------------------


@dataclass
class RatingTable:
    ids: list
    split: list
    dims: tuple
    values: np.ndarray

    def __post_init__(self):
        _check_unique(self.ids, "rating table")
        bad = sorted({s for s in self.split if s not in ("train", "test")})
        if bad:
            raise DataError(f"rating table: split must be train/test, got {bad}")
        self._index = {cid: i for i, cid in enumerate(self.ids)}

    def ids_for(self, split):
        return sorted(cid for cid, s in zip(self.ids, self.split) if s == split)

    def targets(self, ids):
        missing = [i for i in ids if i not in self._index]
        if missing:
            raise DataError(f"clip ids without ratings: {missing[:10]}")
        return self.values[[self._index[i] for i in ids]]


def read_rating_table(path, splits_path=None):
    """``clip_id,split,<dim>...``; the split may instead come from ``clip_id,split``."""
    header, rows = read_rows(path, ["clip_id"])
    split_map = None
    if splits_path is not None:
        _, srows = read_rows(splits_path, ["clip_id", "split"])
        split_map = {r["clip_id"]: r["split"] for _, r in srows}
    elif "split" not in header:
        raise DataError(f"{path}: no split column and no split file given")
    dims = tuple(h for h in header if h not in ("clip_id", "split"))
    if not dims:
        raise DataError(f"{path}: no rating columns")
    ids, split = [], []
    values = np.empty((len(rows), len(dims)))
    for i, (ln, r) in enumerate(rows):
        cid = r["clip_id"]
        ids.append(cid)
        if split_map is not None:
            if cid not in split_map:
                raise DataError(f"{splits_path}: no split for clip {cid}")
            split.append(split_map[cid])
        else:
            split.append(r["split"])
        values[i] = [_num(path, ln, r, d) for d in dims]
    return RatingTable(ids, split, dims, values)


def write_rating_table(path, table):
    write_rows(
        path,
        ["clip_id", "split", *table.dims],
        ([cid, s, *row] for cid, s, row in zip(table.ids, table.split, table.values.tolist())),
    )


def read_rater_table(path):
    """Long rater CSV -> {dim: (clip ids, clips x raters matrix with NaN gaps)}."""
    _, rows = read_rows(path, RATER_HEADER)
    by_dim = defaultdict(dict)
    for ln, r in rows:
        key = (r["clip_id"], r["rater_id"])
        if key in by_dim[r["rating_dim"]]:
            raise DataError(f"{path}:{ln}: duplicate rating for {key}")
        by_dim[r["rating_dim"]][key] = _num(path, ln, r, "value")
    out = {}
    for dim, entries in by_dim.items():
        clips = sorted({c for c, _ in entries})
        raters = sorted({r for _, r in entries})
        ci = {c: i for i, c in enumerate(clips)}
        ri = {r: i for i, r in enumerate(raters)}
        M = np.full((len(clips), len(raters)), np.nan)
        for (c, r), v in entries.items():
            M[ci[c], ri[r]] = v
        out[dim] = (clips, M)
    return out


# -- scores -------------------------------------------------------------------


def gamma_string(gamma, names=None):
    names = names or [f"g{i}" for i in range(len(gamma))]
    return ";".join(f"{n}:{float(v)!r}" for n, v in zip(names, gamma))


def write_scores(path, scores, with_gamma=False, group_names=None):
    header = SCORE_HEADER + (["gamma"] if with_gamma else [])
    rows = []
    for s in scores:
        row = [s.feature_set_id, s.layer_id, s.rating_dim, s.alpha, s.r_test, s.n_test]
        if with_gamma:
            row.append(gamma_string(s.gamma, group_names) if s.gamma is not None else "")
        rows.append(row)
    write_rows(path, header, rows)


def read_scores(path):
    """Score CSV -> list of dicts with typed alpha, r_test and n_test."""
    _, rows = read_rows(path, SCORE_HEADER)
    out = []
    for ln, r in rows:
        rec = dict(r)
        rec["alpha"] = _num(path, ln, r, "alpha")
        rec["r_test"] = _num(path, ln, r, "r_test")
        rec["n_test"] = _num(path, ln, r, "n_test", int)
        out.append(rec)
    return out
