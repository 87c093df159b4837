"""Scene persistence.

Binary "FSPLAT1" layout (little endian):
  magic b"FSPLAT1" | version u32 | count u64 | SH degree u8
  count records: group u32 | mu 3xf64 | q 4xf64 | s_log 3xf64 | o_logit f64
                 | sh (K*3)xf64 coefficient-major
  footer: sky 3xf64 | track_count u32
  per track: object id u32 | pose_count u64
             | poses: t u32 | rotation 9xf64 row-major | translation 3xf64

The binary round trip is bit exact. The sibling text format is one Gaussian
per line (whitespace-separated numbers in the same order, group first) with
'#' comments, plus "sky"/"track" keyword lines; it round-trips to full f64
precision via repr-style formatting.

Fisher ledger dump "FLEDG1": magic | N u64 | N x f64 entries | reg f64.
The contributing-view count is diagnostic state and is not persisted.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError
from .fisher import FisherLedger
from .scene import GaussianCloud, RigidPoseTrack, SkyModel, sh_coeff_count

FSPLAT_MAGIC = b"FSPLAT1"
FSPLAT_VERSION = 1
FLEDG_MAGIC = b"FLEDG1"


def save_cloud(cloud: GaussianCloud, tracks: list[RigidPoseTrack],
               sky: SkyModel, path, fmt: str = "binary") -> None:
    if fmt == "binary":
        _save_binary(cloud, tracks, sky, path)
    elif fmt == "text":
        _save_text(cloud, tracks, sky, path)
    else:
        raise ValueError(f"unknown cloud format {fmt!r}")


def load_cloud(path):
    """Auto-detects binary vs text by the magic bytes.
    Returns (cloud, tracks, sky)."""
    raw = Path(path).read_bytes()
    if raw.startswith(FSPLAT_MAGIC):
        return _load_binary(raw, path)
    return _load_text(raw, path)


def _record_format(degree: int) -> struct.Struct:
    k = sh_coeff_count(degree)
    return struct.Struct(f"<I{11 + 3 * k}d")


def _save_binary(cloud, tracks, sky, path):
    rec = _record_format(cloud.degree)
    with open(path, "wb") as f:
        f.write(FSPLAT_MAGIC)
        f.write(struct.pack("<IQB", FSPLAT_VERSION, len(cloud), cloud.degree))
        for i in range(len(cloud)):
            vals = np.concatenate([
                cloud.mu[i], cloud.q[i], cloud.s_log[i],
                [cloud.o_logit[i]], cloud.sh[i].ravel(),
            ])
            f.write(rec.pack(int(cloud.group[i]), *vals))
        f.write(struct.pack("<3d", *sky.color))
        f.write(struct.pack("<I", len(tracks)))
        for trk in tracks:
            ts = trk.timestamps
            f.write(struct.pack("<IQ", trk.object_id, len(ts)))
            for t in ts:
                f.write(struct.pack("<I", t))
                f.write(struct.pack("<9d", *trk.rotations[t].ravel()))
                f.write(struct.pack("<3d", *trk.translations[t]))


def _load_binary(raw: bytes, path):
    header = struct.Struct("<IQB")
    pos = len(FSPLAT_MAGIC)
    if len(raw) < pos + header.size:
        raise ParseError(f"{path}: truncated FSPLAT1 header", len(raw))
    version, count, degree = header.unpack_from(raw, pos)
    if version != FSPLAT_VERSION:
        raise ParseError(
            f"{path}: unsupported FSPLAT version {version}", pos
        )
    if degree not in (0, 1, 2):
        raise ParseError(f"{path}: bad SH degree {degree}", pos + 12)
    pos += header.size

    k = sh_coeff_count(degree)
    rec = _record_format(degree)
    mu = np.empty((count, 3))
    q = np.empty((count, 4))
    s_log = np.empty((count, 3))
    o_logit = np.empty(count)
    sh = np.empty((count, k, 3))
    group = np.empty(count, np.int32)
    for i in range(count):
        if len(raw) < pos + rec.size:
            raise ParseError(f"{path}: truncated Gaussian record {i}", pos)
        fields = rec.unpack_from(raw, pos)
        group[i] = fields[0]
        vals = np.array(fields[1:])
        mu[i] = vals[0:3]
        q[i] = vals[3:7]
        s_log[i] = vals[7:10]
        o_logit[i] = vals[10]
        sh[i] = vals[11:].reshape(k, 3)
        pos += rec.size

    if len(raw) < pos + 24 + 4:
        raise ParseError(f"{path}: truncated sky/track footer", pos)
    sky = SkyModel(np.array(struct.unpack_from("<3d", raw, pos)))
    pos += 24
    (track_count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    tracks = []
    for _ in range(track_count):
        if len(raw) < pos + 12:
            raise ParseError(f"{path}: truncated track header", pos)
        oid, pose_count = struct.unpack_from("<IQ", raw, pos)
        pos += 12
        trk = RigidPoseTrack(int(oid))
        for _ in range(pose_count):
            if len(raw) < pos + 4 + 96:
                raise ParseError(f"{path}: truncated pose record", pos)
            (t,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            rot = np.array(struct.unpack_from("<9d", raw, pos)).reshape(3, 3)
            pos += 72
            trans = np.array(struct.unpack_from("<3d", raw, pos))
            pos += 24
            trk.set_pose(int(t), rot, trans)
        tracks.append(trk)
    if pos != len(raw):
        raise ParseError(f"{path}: {len(raw) - pos} trailing bytes", pos)

    cloud = GaussianCloud(mu, q, s_log, o_logit, sh, group, degree)
    return cloud, tracks, sky


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _save_text(cloud, tracks, sky, path):
    with open(path, "w") as f:
        f.write("# faithsplat cloud, one Gaussian per line:\n")
        f.write("# group mu(3) q(4) s_log(3) o_logit sh(K*3 coefficient-major)\n")
        f.write(f"fsplat-text {FSPLAT_VERSION} {len(cloud)} {cloud.degree}\n")
        for i in range(len(cloud)):
            vals = np.concatenate([
                cloud.mu[i], cloud.q[i], cloud.s_log[i],
                [cloud.o_logit[i]], cloud.sh[i].ravel(),
            ])
            f.write(f"{int(cloud.group[i])} {_fmt(vals)}\n")
        f.write(f"sky {_fmt(sky.color)}\n")
        for trk in tracks:
            for t in trk.timestamps:
                f.write(
                    f"track {trk.object_id} {t} "
                    f"{_fmt(trk.rotations[t].ravel())} "
                    f"{_fmt(trk.translations[t])}\n"
                )


def _load_text(raw: bytes, path):
    text = raw.decode("utf-8", errors="replace")
    lines = []
    offset = 0
    for line in text.splitlines(keepends=True):
        stripped = line.split("#", 1)[0].strip()
        if stripped:
            lines.append((offset, stripped))
        offset += len(line.encode("utf-8", errors="replace"))

    if not lines:
        raise ParseError(f"{path}: empty cloud file", 0)
    off, head = lines[0]
    parts = head.split()
    if parts[0] != "fsplat-text" or len(parts) != 4:
        raise ParseError(f"{path}: bad text header {head!r}", off)
    try:
        version, count, degree = int(parts[1]), int(parts[2]), int(parts[3])
    except ValueError:
        raise ParseError(f"{path}: bad text header {head!r}", off) from None
    if version != FSPLAT_VERSION:
        raise ParseError(f"{path}: unsupported version {version}", off)
    if degree not in (0, 1, 2):
        raise ParseError(f"{path}: bad SH degree {degree}", off)

    k = sh_coeff_count(degree)
    width = 12 + 3 * k
    mu = np.empty((count, 3))
    q = np.empty((count, 4))
    s_log = np.empty((count, 3))
    o_logit = np.empty(count)
    sh = np.empty((count, k, 3))
    group = np.empty(count, np.int32)

    body = lines[1:]
    if len(body) < count:
        raise ParseError(f"{path}: expected {count} Gaussian lines", len(raw))
    for i in range(count):
        off, line = body[i]
        fields = line.split()
        if len(fields) != width:
            raise ParseError(
                f"{path}: Gaussian line has {len(fields)} fields, "
                f"expected {width}", off,
            )
        try:
            group[i] = int(fields[0])
            vals = np.array([float(v) for v in fields[1:]])
        except ValueError:
            raise ParseError(f"{path}: bad number on Gaussian line", off) from None
        mu[i] = vals[0:3]
        q[i] = vals[3:7]
        s_log[i] = vals[7:10]
        o_logit[i] = vals[10]
        sh[i] = vals[11:].reshape(k, 3)

    sky = SkyModel()
    tracks: dict[int, RigidPoseTrack] = {}
    for off, line in body[count:]:
        fields = line.split()
        if fields[0] == "sky":
            if len(fields) != 4:
                raise ParseError(f"{path}: sky line needs 3 values", off)
            sky = SkyModel(np.array([float(v) for v in fields[1:]]))
        elif fields[0] == "track":
            if len(fields) != 3 + 9 + 3:
                raise ParseError(f"{path}: track line needs id, t, R(9), t(3)", off)
            oid, t = int(fields[1]), int(fields[2])
            vals = np.array([float(v) for v in fields[3:]])
            trk = tracks.setdefault(oid, RigidPoseTrack(oid))
            trk.set_pose(t, vals[:9].reshape(3, 3), vals[9:])
        else:
            raise ParseError(f"{path}: unknown directive {fields[0]!r}", off)

    cloud = GaussianCloud(mu, q, s_log, o_logit, sh, group, degree)
    return cloud, list(tracks.values()), sky


def save_ledger(ledger: FisherLedger, path) -> None:
    with open(path, "wb") as f:
        f.write(FLEDG_MAGIC)
        f.write(struct.pack("<Q", ledger.h_prior.shape[0]))
        f.write(ledger.h_prior.astype("<f8").tobytes())
        f.write(struct.pack("<d", ledger.reg))


def load_ledger(path) -> FisherLedger:
    raw = Path(path).read_bytes()
    if not raw.startswith(FLEDG_MAGIC):
        raise ParseError(f"{path}: bad magic, expected FLEDG1", 0)
    pos = len(FLEDG_MAGIC)
    if len(raw) < pos + 8:
        raise ParseError(f"{path}: truncated ledger header", len(raw))
    (n,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    if len(raw) < pos + 8 * n + 8:
        raise ParseError(f"{path}: truncated ledger entries", len(raw))
    entries = np.frombuffer(raw, "<f8", count=n, offset=pos).copy()
    pos += 8 * n
    (reg,) = struct.unpack_from("<d", raw, pos)
    pos += 8
    if pos != len(raw):
        raise ParseError(f"{path}: {len(raw) - pos} trailing bytes", pos)
    return FisherLedger(entries, reg=reg, views=0)
