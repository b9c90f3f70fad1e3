"""On-disk formats for the batch pipeline.

Every file is written to a temporary sibling and renamed into place, so a
crashed run never leaves a half-written artifact.  CSV files start with a
``# config_hash=... seed=...`` comment line.
"""
from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .likelihood import Trajectory


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def fmt(x) -> str:
    """Shortest round-tripping text for a float, so reruns compare byte for byte."""
    return repr(float(x))


def csv_text(header_comment: str | None, columns, rows) -> str:
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def read_csv(path) -> tuple[list[str], list[dict[str, str]]]:
    """Comment lines and rows of a CSV artifact."""
    comments, body = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                comments.append(line[1:].strip())
            elif line.strip():
                body.append(line)
    return comments, list(csv.DictReader(body))


def header_fields(comments) -> dict[str, str]:
    out = {}
    for line in comments:
        if line.startswith("trajectory="):
            out["trajectory"] = line.split("=", 1)[1]
            continue
        for token in line.split():
            if "=" in token:
                key, value = token.split("=", 1)
                out[key] = value
    return out


def write_json(path, obj) -> Path:
    return atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def safe_name(traj_id: str) -> str:
    """File stem for a trajectory id such as ``reef/site/2004-03-01``."""
    return re.sub(r"[^A-Za-z0-9._-]+", "_", traj_id).strip("_") or "trajectory"


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "id": traj.id,
        "reef": traj.reef,
        "site": traj.site,
        "K": traj.K,
        "groups": list(traj.groups),
        "times": traj.times.tolist(),
        "obs": traj.obs.tolist(),
        "stderr_var": traj.stderr_var.tolist(),
        "meta": traj.meta,
    }


def trajectory_from_dict(d: dict) -> Trajectory:
    return Trajectory(
        d["id"], np.array(d["times"], dtype=float), np.array(d["obs"], dtype=float),
        np.array(d["stderr_var"], dtype=float), float(d["K"]), tuple(d["groups"]),
        d.get("reef", ""), d.get("site", ""), dict(d.get("meta", {})),
    )


def write_trajectories(path, trajs, header: str) -> Path:
    doc = {"header": header, "trajectories": [trajectory_to_dict(t) for t in trajs]}
    return write_json(path, doc)


def read_trajectories(path) -> list[Trajectory]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    items = doc["trajectories"] if isinstance(doc, dict) else doc
    return [trajectory_from_dict(d) for d in items]


# posterior draws after burn-in, one row per kept draw
DRAW_PREFIX = ("chain", "draw")


def draws_text(header: str, traj_id: str, names, chains) -> str:
    """``chains`` is a list of (kept, d) post-burn-in theta arrays."""
    rows = []
    for c, draws in enumerate(chains):
        for i, row in enumerate(draws):
            rows.append([c, i, *map(float, row)])
    return csv_text(f"{header}\ntrajectory={traj_id}", [*DRAW_PREFIX, *names], rows)


def read_draws(path):
    """(trajectory id, parameter names, per-chain draw arrays)."""
    comments, rows = read_csv(path)
    meta = header_fields(comments)
    if "trajectory" not in meta:
        raise ValueError(f"{path}: draws file lacks a trajectory header")
    if not rows:
        raise ValueError(f"{path}: no draws")
    names = [k for k in rows[0] if k not in DRAW_PREFIX]
    by_chain: dict[int, list] = {}
    for r in rows:
        by_chain.setdefault(int(r["chain"]), []).append([float(r[n]) for n in names])
    return meta["trajectory"], names, [np.array(by_chain[c]) for c in sorted(by_chain)]
