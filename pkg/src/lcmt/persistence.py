"""Config parsing, binary checkpoints, metrics logs and feature dumps.

Checkpoint layout (all integers little-endian)::

    8 bytes   magic "LCMTCKPT"
    u32       format version (1)
    u64       step, u64 epoch
    u32 + n   config text (utf-8, the key = value grammar)
    u32       record count, then per record:
              u16 + n name (utf-8), u32 rank, rank x u64 extents,
              prod(extents) x float64
    u64 + n   opaque RNG/stream state
"""

from __future__ import annotations

import csv
import dataclasses
import io
import os
import struct
import typing
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .config import TrainConfig, copy_config, sections

MAGIC = b"LCMTCKPT"
FORMAT_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class CheckpointError(ValueError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


# ---------------------------------------------------------------- config

def _field_types(section_cls) -> dict[str, object]:
    return typing.get_type_hints(section_cls)


def _parse_value(key: str, raw: str, typ) -> object:
    raw = raw.strip()
    origin = typing.get_origin(typ)
    args = typing.get_args(typ)
    if origin is typing.Union and type(None) in args:
        if raw.lower() == "none":
            return None
        (typ,) = [a for a in args if a is not type(None)]
        origin, args = typing.get_origin(typ), typing.get_args(typ)
    try:
        if origin is tuple:
            body = raw.strip("[]() ")
            return tuple(int(v) for v in body.split(",") if v.strip())
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError(raw)
            return low == "true"
        if typ is int:
            return int(raw)
        if typ is float:
            v = float(raw)
            if not np.isfinite(v):
                raise ValueError(raw)
            return v
        if typ is str:
            return raw
    except ValueError:
        raise ConfigError(key, f"type mismatch, cannot read {raw!r} as {getattr(typ, '__name__', typ)}") from None
    raise ConfigError(key, f"unsupported field type {typ}")


def set_key(cfg: TrainConfig, key: str, raw: str) -> None:
    """Apply one ``section.name = value`` assignment in place."""
    section, _, name = key.strip().partition(".")
    sec = getattr(cfg, section, None) if section and not section.startswith("_") else None
    if sec is None or not dataclasses.is_dataclass(sec):
        raise ConfigError(key, "unknown key")
    types = _field_types(type(sec))
    if name not in types:
        raise ConfigError(key, "unknown key")
    setattr(sec, name, _parse_value(key, raw, types[name]))


def _validate(cfg: TrainConfig) -> TrainConfig:
    try:
        return cfg.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        key, sep, msg = str(exc).partition(": ")
        raise ConfigError(key if sep else "config", msg if sep else str(exc)) from None


def parse_config_text(text: str, overrides: Iterable[str] = ()) -> TrainConfig:
    cfg = TrainConfig()
    seen: set[str] = set()
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split(" #", 1)[0].strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}", f"expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {line_no}", "missing key before '='")
        if key in seen:
            raise ConfigError(key, "duplicate key")
        seen.add(key)
        set_key(cfg, key, raw)
    if "data.kind" not in seen:
        raise ConfigError("data.kind", "missing required key")
    for item in overrides:
        if "=" not in item or not item.split("=", 1)[0].strip():
            raise ConfigError(item, "override must look like key=value")
        key, raw = item.split("=", 1)
        set_key(cfg, key.strip(), raw)
    return _validate(cfg)


def parse_config(path, overrides: Iterable[str] = ()) -> TrainConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), overrides)


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(i) for i in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg: TrainConfig) -> str:
    """Full config in the file grammar; parses back to an equal config."""
    lines = []
    for name, sec in sections(cfg):
        for f in dataclasses.fields(sec):
            lines.append(f"{name}.{f.name} = {_format_value(getattr(sec, f.name))}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: TrainConfig, overrides: Iterable[str]) -> TrainConfig:
    out = copy_config(cfg)
    for item in overrides:
        key, _, raw = item.partition("=")
        set_key(out, key.strip(), raw)
    _validate(out)
    return out


# ------------------------------------------------------------ checkpoint

@dataclass
class Checkpoint:
    step: int
    epoch: int
    tensors: dict[str, np.ndarray]
    rng_state: bytes
    config_text: str
    version: int = FORMAT_VERSION

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        p = prefix + "/"
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}


def checkpoint_bytes(c: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQQ", c.version, c.step, c.epoch))
    cfg = c.config_text.encode()
    buf.write(struct.pack("<I", len(cfg)) + cfg)
    buf.write(struct.pack("<I", len(c.tensors)))
    for name, arr in c.tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)) + nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    buf.write(struct.pack("<Q", len(c.rng_state)) + c.rng_state)
    return buf.getvalue()


def save_checkpoint(path, c: Checkpoint) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(checkpoint_bytes(c))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpoint(f"checkpoint truncated at byte {self.pos} (needed {n} more)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise BadMagic("not a checkpoint file (bad magic)")
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    step, epoch = r.unpack("<QQ")
    (n,) = r.unpack("<I")
    config_text = r.take(n).decode()
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    (rlen,) = r.unpack("<Q")
    rng_state = r.take(rlen)
    return Checkpoint(step=step, epoch=epoch, tensors=tensors, rng_state=rng_state,
                      config_text=config_text, version=version)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


# --------------------------------------------------------------- metrics

@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    student_error: float
    teacher_error: float
    ce: float
    cons: float
    lc: float
    lambda1: float
    lambda2: float
    lr: float
    feature_variance: float
    collapse_flag: bool


METRIC_COLUMNS = [f.name for f in dataclasses.fields(EpochMetrics)]


def _metric_cell(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def append_metrics(path, row: EpochMetrics) -> None:
    """Append one row, writing the header first if the file is new or empty."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(METRIC_COLUMNS)
        w.writerow([_metric_cell(getattr(row, c)) for c in METRIC_COLUMNS])


def read_metrics(path) -> list[EpochMetrics]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected metrics header {header}")
        out = []
        for row in reader:
            rec = dict(zip(header, row))
            out.append(EpochMetrics(
                epoch=int(rec["epoch"]),
                collapse_flag=rec["collapse_flag"] == "1",
                **{c: float(rec[c]) for c in METRIC_COLUMNS if c not in ("epoch", "collapse_flag")},
            ))
        return out


# -------------------------------------------------------------- features

@dataclass
class FeatureDump:
    z: np.ndarray
    label: np.ndarray
    labeled: np.ndarray
    predicted: np.ndarray

    def __post_init__(self):
        n = self.z.shape[0]
        if not (len(self.label) == len(self.labeled) == len(self.predicted) == n):
            raise ValueError("feature dump columns have different lengths")


def export_features(path, dump: FeatureDump) -> None:
    d = dump.z.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"z{i}" for i in range(d)] + ["label", "labeled", "predicted"])
        for z, y, m, p in zip(dump.z, dump.label, dump.labeled, dump.predicted):
            w.writerow([repr(float(v)) for v in z] + [int(y), int(bool(m)), int(p)])


def read_features(path) -> FeatureDump:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 3
        rows = [r for r in reader if r]
    arr = np.array([[float(v) for v in r[:d]] for r in rows]).reshape(len(rows), d)
    ints = np.array([[int(v) for v in r[d:]] for r in rows], dtype=np.int64).reshape(len(rows), 3)
    return FeatureDump(z=arr, label=ints[:, 0], labeled=ints[:, 1].astype(bool), predicted=ints[:, 2])
