"""Binary dataset and checkpoint containers, plus report emission.

Dataset layout (all integers little-endian)::

    b"ATWD"  u32 version  u32 dim  u64 count  u64 seed
    u32 n    n bytes of UTF-8 JSON schedule descriptor
    count * dim float64 LE values, row-major

Checkpoint layout::

    b"ATWC"  u32 version  u32 n  n bytes of UTF-8 JSON metadata
    u64 n_params  params | adam m | adam v   (3 * n_params float64 LE)
    32-byte SHA-256 of everything above

Loaders validate magic, version, lengths and (for checkpoints) the checksum
before building any object.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .errors import BadMagic, ChecksumMismatch, FormatError, TruncatedPayload, VersionMismatch
from .net import DenoiserNet
from .schedule import NoiseSchedule
from .trainer import STREAM_TRAIN, AdamState, Checkpoint, NoisyDataset, TrainConfig

DATASET_MAGIC = b"ATWD"
CHECKPOINT_MAGIC = b"ATWC"
DATASET_VERSION = 1
CHECKPOINT_VERSION = 1

_F64 = np.dtype("<f8")
_DS_HEAD = struct.Struct("<4sIIQQ")


def schedule_descriptor(schedule: NoiseSchedule) -> dict:
    return {"kind": schedule.kind, "T": schedule.T, "t_n": schedule.t_n,
            "anchors": None if schedule.anchors is None else [list(a) for a in schedule.anchors],
            "guard": schedule.guard}


def schedule_from_descriptor(d: dict) -> NoiseSchedule:
    try:
        anchors = None if d["anchors"] is None else tuple(tuple(a) for a in d["anchors"])
        return NoiseSchedule(d["kind"], float(d["T"]), float(d["t_n"]), anchors,
                             float(d["guard"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad schedule descriptor: {exc}") from exc


def _canon_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _atomic_write(path, blob: bytes):
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


# -- datasets -------------------------------------------------------------------

def dataset_bytes(ds: NoisyDataset) -> bytes:
    desc = _canon_json(schedule_descriptor(ds.schedule))
    head = _DS_HEAD.pack(DATASET_MAGIC, DATASET_VERSION, ds.dim, ds.count, ds.seed)
    payload = np.ascontiguousarray(ds.samples, dtype=_F64).tobytes()
    return head + struct.pack("<I", len(desc)) + desc + payload


def save_dataset(path, ds: NoisyDataset):
    _atomic_write(path, dataset_bytes(ds))


def parse_dataset(blob: bytes) -> NoisyDataset:
    if len(blob) < 4 or blob[:4] != DATASET_MAGIC:
        raise BadMagic(f"not a dataset file (magic {blob[:4]!r})")
    if len(blob) < _DS_HEAD.size + 4:
        raise TruncatedPayload("header is incomplete")
    _, version, dim, count, seed = _DS_HEAD.unpack_from(blob)
    if version != DATASET_VERSION:
        raise VersionMismatch(f"dataset version {version}, expected {DATASET_VERSION}")
    (n_desc,) = struct.unpack_from("<I", blob, _DS_HEAD.size)
    start = _DS_HEAD.size + 4 + n_desc
    if len(blob) < start:
        raise TruncatedPayload("schedule block is incomplete")
    try:
        desc = json.loads(blob[_DS_HEAD.size + 4:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable schedule block: {exc}") from exc
    need = start + count * dim * 8
    if len(blob) < need:
        raise TruncatedPayload(f"payload has {len(blob) - start} bytes, expected {need - start}")
    if len(blob) > need:
        raise FormatError(f"{len(blob) - need} trailing bytes after payload")
    if dim < 1:
        raise FormatError("dim must be >= 1")
    samples = np.frombuffer(blob, dtype=_F64, count=count * dim, offset=start)
    samples = samples.reshape(count, dim).astype(np.float64)
    return NoisyDataset(samples, schedule_from_descriptor(desc), seed)


def load_dataset(path) -> NoisyDataset:
    with open(path, "rb") as fh:
        return parse_dataset(fh.read())


# -- checkpoints ----------------------------------------------------------------

def checkpoint_metadata(ckpt: Checkpoint) -> dict:
    return {
        "architecture": {k: v for k, v in ckpt.net.describe().items() if k != "n_params"},
        "n_params": ckpt.net.n_params,
        "config": ckpt.config.to_dict(),
        "schedule": schedule_descriptor(ckpt.schedule),
        "step": ckpt.step,
        "adam_step": ckpt.opt.step,
        "seed": ckpt.seed,
        # counter-based generator: the next step draws from (seed, stream, step)
        "rng": {"generator": "philox", "seed": ckpt.config.seed, "stream": STREAM_TRAIN,
                "next_counter": ckpt.step},
        "history": list(ckpt.history),
    }


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    meta = _canon_json(checkpoint_metadata(ckpt))
    n = ckpt.net.n_params
    body = b"".join([
        CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(meta)), meta,
        struct.pack("<Q", n),
        np.ascontiguousarray(ckpt.net.params, dtype=_F64).tobytes(),
        np.ascontiguousarray(ckpt.opt.m, dtype=_F64).tobytes(),
        np.ascontiguousarray(ckpt.opt.v, dtype=_F64).tobytes(),
    ])
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, ckpt: Checkpoint):
    _atomic_write(path, checkpoint_bytes(ckpt))


def parse_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise BadMagic(f"not a checkpoint file (magic {blob[:4]!r})")
    if len(blob) < 12 + 8 + 32:
        raise TruncatedPayload("checkpoint shorter than its fixed header")
    version, n_meta = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumMismatch("checkpoint content does not match its checksum")
    if len(body) < 12 + n_meta + 8:
        raise TruncatedPayload("metadata block is incomplete")
    try:
        meta = json.loads(body[12:12 + n_meta].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable metadata: {exc}") from exc
    (n,) = struct.unpack_from("<Q", body, 12 + n_meta)
    start = 12 + n_meta + 8
    if len(body) != start + 3 * n * 8:
        raise TruncatedPayload(f"expected {3 * n} parameter values")
    arrays = np.frombuffer(body, dtype=_F64, count=3 * n, offset=start).astype(np.float64)
    params, m, v = arrays[:n], arrays[n:2 * n], arrays[2 * n:]
    try:
        arch = meta["architecture"]
        if meta["n_params"] != n:
            raise FormatError(f"metadata says {meta['n_params']} parameters, payload has {n}")
        net = DenoiserNet(arch["dim"], tuple(arch["hidden_sizes"]), arch["embed_dim"],
                          params.copy(), arch["activation"], arch["sigma_data"])
        cfg = dict(meta["config"])
        cfg["eval_sigmas"] = tuple(cfg["eval_sigmas"])
        config = TrainConfig(**cfg)
        return Checkpoint(net, AdamState(m.copy(), v.copy(), int(meta["adam_step"])),
                          int(meta["step"]), config, schedule_from_descriptor(meta["schedule"]),
                          int(meta["seed"]), list(meta["history"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"inconsistent checkpoint metadata: {exc}") from exc


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())


# -- reports --------------------------------------------------------------------

def write_report(report, json_path=None, csv_path=None):
    """Write ``report.to_dict()`` as one JSON object and, if supported, its CSV table."""
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
