"""Stream and trace file formats.

Streams are NDJSON: a header object carrying ``format_version``, ``mode``
(``patch`` or ``direct_z``), ``n_cameras`` and ``patch_dim``, followed by one
record object per frame.  A record carries ``t`` (strictly increasing from 1)
and, per camera, either a residual ``z`` or a flat ``patch`` vector, plus
optional ground-truth fields ``s`` and ``o``.  Numeric traces are CSV.  All
floats are serialised with round-trip-exact decimal formatting (repr).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .hmm_filter import BeliefState
from .subspace import AffineSubspace

__all__ = [
    "FORMAT_VERSION",
    "FrameRecord",
    "StreamFormatError",
    "StreamMeta",
    "read_posteriors_csv",
    "read_stream",
    "read_subspace_snapshot",
    "read_truth_csv",
    "write_beliefs_csv",
    "write_posteriors_csv",
    "write_stream",
    "write_subspace_snapshot",
    "write_track_csv",
    "write_truth_csv",
]

FORMAT_VERSION = 1


class StreamFormatError(ValueError):
    """Malformed stream or trace input; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True, eq=False)
class FrameRecord:
    """One frame at the I/O boundary: residuals or patches, plus truth bits."""

    t: int
    z: np.ndarray | None = None
    patches: np.ndarray | None = None
    s: int | None = None
    o: np.ndarray | None = None

    @property
    def n_cameras(self) -> int:
        if self.z is not None:
            return int(self.z.size)
        assert self.patches is not None
        return int(self.patches.shape[0])


@dataclass(frozen=True)
class StreamMeta:
    format_version: int
    mode: str
    n_cameras: int
    patch_dim: int | None = None


def _float_list(values: Iterable[float]) -> list[float]:
    return [float(v) for v in values]


def write_stream(
    path: str | Path,
    records: Iterable[FrameRecord],
    mode: str,
    n_cameras: int,
    patch_dim: int | None = None,
    include_truth: bool = False,
) -> None:
    header: dict = {
        "format_version": FORMAT_VERSION,
        "mode": mode,
        "n_cameras": n_cameras,
    }
    if patch_dim is not None:
        header["patch_dim"] = patch_dim
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for rec in records:
            obj: dict = {"t": int(rec.t)}
            if mode == "direct_z":
                assert rec.z is not None
                obj["z"] = _float_list(rec.z)
            else:
                assert rec.patches is not None
                obj["patch"] = [_float_list(row) for row in rec.patches]
            if include_truth and rec.s is not None and rec.o is not None:
                obj["s"] = int(rec.s)
                obj["o"] = [int(b) for b in rec.o]
            fh.write(json.dumps(obj) + "\n")


def read_stream(path: str | Path) -> tuple[StreamMeta, list[FrameRecord]]:
    """Parse a stream file, validating per-line; raises StreamFormatError."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise StreamFormatError("empty stream file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise StreamFormatError(f"bad header JSON: {exc}", line=1) from exc
    if not isinstance(header, dict) or "format_version" not in header:
        raise StreamFormatError("header must be an object with format_version", line=1)
    if header["format_version"] != FORMAT_VERSION:
        raise StreamFormatError(
            f"unsupported format_version {header['format_version']}", line=1
        )
    mode = header.get("mode")
    if mode not in ("patch", "direct_z"):
        raise StreamFormatError(f"unknown mode {mode!r}", line=1)
    n_cameras = header.get("n_cameras")
    if not isinstance(n_cameras, int) or n_cameras < 1:
        raise StreamFormatError("header n_cameras must be a positive integer", line=1)
    patch_dim = header.get("patch_dim")
    meta = StreamMeta(
        format_version=header["format_version"],
        mode=mode,
        n_cameras=n_cameras,
        patch_dim=patch_dim,
    )
    records: list[FrameRecord] = []
    expected_t = 1
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise StreamFormatError(f"bad record JSON: {exc}", line=lineno) from exc
        if obj.get("t") != expected_t:
            raise StreamFormatError(
                f"expected t={expected_t}, got {obj.get('t')!r}", line=lineno
            )
        z = patches = None
        if mode == "direct_z":
            if "z" not in obj:
                raise StreamFormatError("direct_z record missing 'z'", line=lineno)
            z = np.asarray(obj["z"], dtype=float)
            if z.shape != (n_cameras,):
                raise StreamFormatError(
                    f"'z' must have {n_cameras} entries, got shape {z.shape}", line=lineno
                )
            if np.any(z < 0) or not np.all(np.isfinite(z)):
                raise StreamFormatError("'z' entries must be finite and >= 0", line=lineno)
        else:
            if "patch" not in obj:
                raise StreamFormatError("patch record missing 'patch'", line=lineno)
            try:
                patches = np.asarray(obj["patch"], dtype=float)
            except ValueError as exc:
                raise StreamFormatError(f"ragged patch arrays: {exc}", line=lineno) from exc
            if patches.ndim != 2 or patches.shape[0] != n_cameras:
                raise StreamFormatError(
                    f"'patch' must be {n_cameras} x d, got shape {patches.shape}",
                    line=lineno,
                )
            if patch_dim is not None and patches.shape[1] != patch_dim:
                raise StreamFormatError(
                    f"'patch' rows must have {patch_dim} entries", line=lineno
                )
        s = obj.get("s")
        o = obj.get("o")
        records.append(
            FrameRecord(
                t=expected_t,
                z=z,
                patches=patches,
                s=None if s is None else int(s),
                o=None if o is None else np.asarray(o, dtype=int),
            )
        )
        expected_t += 1
    if not records:
        raise StreamFormatError("stream has a header but no records")
    return meta, records


def write_truth_csv(path: str | Path, s: np.ndarray, o: np.ndarray) -> None:
    """Ground-truth sidecar: one row per frame, columns t, s, o_1..o_N."""
    n_cameras = o.shape[0]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "s"] + [f"o_{n + 1}" for n in range(n_cameras)])
        for i in range(s.size):
            writer.writerow([i + 1, int(s[i])] + [int(o[n, i]) for n in range(n_cameras)])


def read_truth_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["t", "s"]:
        raise StreamFormatError("truth CSV must start with header t,s,o_1..", line=1)
    n_cameras = len(rows[0]) - 2
    s_list, o_list = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != n_cameras + 2:
            raise StreamFormatError(f"expected {n_cameras + 2} columns", line=lineno)
        s_list.append(int(row[1]))
        o_list.append([int(v) for v in row[2:]])
    return np.asarray(s_list, dtype=int), np.asarray(o_list, dtype=int).T


@dataclass(frozen=True)
class PosteriorRow:
    t: int
    p_change: float
    p_occlusion: tuple[float, ...]
    lambdas: tuple[float, ...]
    alarm: int


def write_posteriors_csv(path: str | Path, rows: Iterable[PosteriorRow], n_cameras: int) -> None:
    """Filter trace: t, p_S, p_O_1..p_O_N, lambda_1..lambda_N, alarm."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t", "p_S"]
            + [f"p_O_{n + 1}" for n in range(n_cameras)]
            + [f"lambda_{n + 1}" for n in range(n_cameras)]
            + ["alarm"]
        )
        for row in rows:
            writer.writerow(
                [row.t, repr(row.p_change)]
                + [repr(v) for v in row.p_occlusion]
                + [repr(v) for v in row.lambdas]
                + [row.alarm]
            )


def read_posteriors_csv(path: str | Path) -> list[PosteriorRow]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["t", "p_S"]:
        raise StreamFormatError("posterior CSV must start with header t,p_S,...", line=1)
    n_cameras = sum(1 for c in rows[0] if c.startswith("p_O_"))
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3 + 2 * n_cameras:
            raise StreamFormatError(f"expected {3 + 2 * n_cameras} columns", line=lineno)
        out.append(
            PosteriorRow(
                t=int(row[0]),
                p_change=float(row[1]),
                p_occlusion=tuple(float(v) for v in row[2 : 2 + n_cameras]),
                lambdas=tuple(float(v) for v in row[2 + n_cameras : 2 + 2 * n_cameras]),
                alarm=int(row[-1]),
            )
        )
    return out


def write_beliefs_csv(path: str | Path, beliefs: Iterable[BeliefState]) -> None:
    """Flat belief dump: t followed by the 2**(N+1) canonical-order probabilities."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for belief in beliefs:
            writer.writerow([belief.t] + [repr(float(p)) for p in belief.probs])


@dataclass(frozen=True)
class TrackRow:
    t: int
    camera: int
    x: int
    y: int
    w: int
    h: int
    score: float
    iou: float
    z: float
    p_occlusion: float
    lam: float
    alarm: int


def write_track_csv(path: str | Path, rows: Iterable[TrackRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t", "camera", "x", "y", "w", "h", "score", "iou", "z", "p_occlusion", "lambda", "alarm"]
        )
        for r in rows:
            writer.writerow(
                [r.t, r.camera + 1, r.x, r.y, r.w, r.h, repr(r.score), repr(r.iou),
                 repr(r.z), repr(r.p_occlusion), repr(r.lam), r.alarm]
            )


def read_track_csv(path: str | Path) -> list[TrackRow]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise StreamFormatError("track CSV must start with its header", line=1)
    out = []
    for row in rows[1:]:
        out.append(
            TrackRow(
                t=int(row[0]),
                camera=int(row[1]) - 1,
                x=int(row[2]),
                y=int(row[3]),
                w=int(row[4]),
                h=int(row[5]),
                score=float(row[6]),
                iou=float(row[7]),
                z=float(row[8]),
                p_occlusion=float(row[9]),
                lam=float(row[10]),
                alarm=int(row[11]),
            )
        )
    return out


def write_subspace_snapshot(path: str | Path, space: AffineSubspace) -> None:
    """Text snapshot: header, effective count, mean row, weight row, basis rows.

    Basis rows are the transposed basis (one row per retained direction).
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"occhmm-subspace {FORMAT_VERSION}\n")
        fh.write(f"effective_count {space.effective_count!r}\n")
        fh.write("mean " + " ".join(repr(float(v)) for v in space.mean) + "\n")
        fh.write("weights " + " ".join(repr(float(v)) for v in space.weights) + "\n")
        for col in space.basis.T:
            fh.write("basis " + " ".join(repr(float(v)) for v in col) + "\n")


def read_subspace_snapshot(path: str | Path) -> AffineSubspace:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("occhmm-subspace"):
        raise StreamFormatError("not a subspace snapshot", line=1)
    count = float(lines[1].split()[1])
    mean = np.array([float(v) for v in lines[2].split()[1:]])
    weights = np.array([float(v) for v in lines[3].split()[1:]])
    basis_rows = [np.array([float(v) for v in ln.split()[1:]]) for ln in lines[4:] if ln.strip()]
    basis = np.stack(basis_rows).T if basis_rows else np.zeros((mean.size, 0))
    return AffineSubspace(mean=mean, basis=basis, weights=weights, effective_count=count)
