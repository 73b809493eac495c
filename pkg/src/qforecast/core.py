"""Domain types, workload log I/O and the checksummed model store.

Workload logs are JSON-lines with two required fields per record, ``ts``
(ISO-8601 UTC) and ``query``; unknown fields are ignored so forecast files
re-ingest cleanly.  Timestamps are normalized to UTC at second resolution.

The model store is a directory holding ``manifest.json`` plus one weight
file per model id.  Weight files are a one-line JSON header followed by
raw little-endian float64 arrays; the manifest carries a sha256 per file
so corruption is detected at load time, and loading one id never opens
another id's file.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np


class WorkloadLogError(Exception):
    pass


class ModelStoreError(Exception):
    pass


class ConfigError(Exception):
    pass


UTC = dt.timezone.utc


_FRACTION_RE = re.compile(r"\.\d+")


def parse_timestamp(text: str) -> dt.datetime:
    """Parse an ISO-8601 instant to aware UTC, truncated to seconds."""
    raw = text.strip()
    if raw.endswith("Z"):
        raw = raw[:-1] + "+00:00"
    # fromisoformat on 3.10 needs 3 or 6 fractional digits; we drop them anyway
    raw = _FRACTION_RE.sub("", raw)
    stamp = dt.datetime.fromisoformat(raw)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=UTC)
    return stamp.astimezone(UTC).replace(microsecond=0)


def format_timestamp(stamp: dt.datetime) -> str:
    return stamp.astimezone(UTC).strftime("%Y-%m-%dT%H:%M:%SZ")


def epoch_seconds(stamp: dt.datetime) -> int:
    return int(stamp.timestamp())


def from_epoch(seconds: float) -> dt.datetime:
    return dt.datetime.fromtimestamp(int(round(seconds)), tz=UTC)


@dataclass(frozen=True)
class TimedQuery:
    text: str
    arrival: dt.datetime

    def __post_init__(self):
        if not self.text:
            raise ValueError("query text must be non-empty")
        if self.arrival.tzinfo is None:
            raise ValueError("arrival must be timezone-aware UTC")


@dataclass
class TimedWorkload:
    queries: list[TimedQuery] = field(default_factory=list)

    def __post_init__(self):
        self._check_order()

    def _check_order(self):
        for prev, cur in zip(self.queries, self.queries[1:]):
            if cur.arrival < prev.arrival:
                raise ValueError("workload arrivals must be non-decreasing")

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self) -> Iterator[TimedQuery]:
        return iter(self.queries)

    @property
    def anchor(self) -> dt.datetime:
        """Last observed arrival; forecasts start here."""
        if not self.queries:
            raise ValueError("empty workload has no anchor")
        return self.queries[-1].arrival

    def slice_by_time(self, start: dt.datetime, end: dt.datetime) -> "TimedWorkload":
        return TimedWorkload([q for q in self.queries if start <= q.arrival < end])

    @staticmethod
    def merge(*parts: "TimedWorkload") -> "TimedWorkload":
        entries = [q for part in parts for q in part.queries]
        entries.sort(key=lambda q: q.arrival)
        return TimedWorkload(entries)


@dataclass
class ForecastResult:
    """Ordered forecast entries (template id, statement, arrival)."""

    entries: list[tuple]                 # (template_id, text, arrival)
    horizon_kind: str                    # 'k' or 'dt'
    horizon_value: int                   # count, or interval seconds
    anchor: Optional[dt.datetime] = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        for prev, cur in zip(self.entries, self.entries[1:]):
            if cur[2] < prev[2]:
                raise ValueError("forecast entries must be ordered by arrival")
        if self.horizon_kind == "k" and len(self.entries) != self.horizon_value:
            raise ValueError(
                f"next-k forecast must hold exactly {self.horizon_value} entries, "
                f"got {len(self.entries)}")
        if self.horizon_kind == "dt":
            if self.anchor is None:
                raise ValueError("next-interval forecast needs an anchor")
            limit = self.anchor + dt.timedelta(seconds=self.horizon_value)
            for _, _, arrival in self.entries:
                if not (self.anchor <= arrival < limit):
                    raise ValueError("forecast arrival outside the target window")


@dataclass
class EngineConfig:
    k: int = 24
    delta_t: int = 3600            # target window, seconds
    delta_t_fine: int = 300        # fine slot for size estimation, seconds
    horizon_t: int = 21600         # size-estimation preview horizon, seconds
    bin_cap: int = 50              # max templates per bin
    alpha: float = 0.75            # accuracy threshold for the feedback loop
    tau: float = 0.75              # predictability threshold
    hash_buckets: int = 1 << 20
    hidden_size: Optional[int] = None   # None -> min(k, 128)
    batch_size: int = 8                 # desk-scale default; raise for big maps
    max_epochs: int = 20
    lr: float = 1e-3
    lr_decay: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.delta_t % self.delta_t_fine != 0:
            raise ConfigError("delta_t_fine must evenly divide delta_t")
        if self.delta_t > self.horizon_t:
            raise ConfigError("delta_t must not exceed horizon_t")
        if not (0 < self.alpha <= 1 and 0 < self.tau <= 1):
            raise ConfigError("alpha and tau must lie in (0, 1]")
        for name in ("k", "delta_t", "delta_t_fine", "horizon_t", "bin_cap",
                     "hash_buckets", "batch_size", "max_epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def effective_hidden(self) -> int:
        return self.hidden_size if self.hidden_size else min(self.k, 128)

    def to_json(self) -> dict:
        return {k: v for k, v in vars(self).items()}

    @classmethod
    def from_json(cls, payload: dict) -> "EngineConfig":
        return cls(**payload)


_DURATION_UNITS = {"s": 1, "m": 60, "h": 3600, "d": 86400, "w": 604800}


def parse_duration(text) -> int:
    """Parse '90', '90s', '15m', '6h', '1d' or '1w' into seconds."""
    if isinstance(text, (int, float)):
        return int(text)
    raw = str(text).strip().lower()
    if raw and raw[-1] in _DURATION_UNITS:
        return int(float(raw[:-1]) * _DURATION_UNITS[raw[-1]])
    return int(float(raw))


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> EngineConfig:
    """Build an EngineConfig from a flat key=value file plus overrides."""
    values: dict = {}
    duration_keys = {"delta_t", "delta_t_fine", "horizon_t"}
    if path:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, _, raw = line.partition("=")
                key = key.strip()
                raw = raw.strip()
                if key not in EngineConfig.__dataclass_fields__:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = raw
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    kwargs = {}
    for key, raw in values.items():
        fld = EngineConfig.__dataclass_fields__[key]
        if key in duration_keys:
            kwargs[key] = parse_duration(raw)
        elif fld.type in ("float",):
            kwargs[key] = float(raw)
        elif key == "hidden_size":
            kwargs[key] = None if str(raw).lower() in ("none", "auto", "") else int(raw)
        else:
            kwargs[key] = int(raw)
    return EngineConfig(**kwargs)


# ---------------------------------------------------------------------------
# Workload logs (JSON lines)
# ---------------------------------------------------------------------------

def read_workload_log(path: str) -> tuple[TimedWorkload, int]:
    """Read a JSONL workload log; returns (workload, malformed line count).

    Records keep file order for equal timestamps (stable sort by arrival).
    """
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise WorkloadLogError(f"cannot read workload log {path}: {exc}") from exc
    queries: list[TimedQuery] = []
    malformed = 0
    with fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                text = record["query"]
                stamp = parse_timestamp(record["ts"])
                if not isinstance(text, str) or not text:
                    raise ValueError("empty query")
            except (KeyError, ValueError, TypeError, json.JSONDecodeError):
                malformed += 1
                continue
            queries.append(TimedQuery(text, stamp))
    if not queries:
        raise WorkloadLogError(f"no valid records in {path} ({malformed} malformed)")
    queries.sort(key=lambda q: q.arrival)  # stable: ties keep file order
    return TimedWorkload(queries), malformed


def write_workload_log(workload: TimedWorkload, path: str,
                       template_ids: Optional[list] = None) -> None:
    """Write a workload as JSONL; round-trips through read_workload_log."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for i, q in enumerate(workload):
                record = {"ts": format_timestamp(q.arrival), "query": q.text}
                if template_ids is not None:
                    record["template_id"] = template_ids[i]
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    except OSError as exc:
        raise WorkloadLogError(f"cannot write workload log {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Model store
# ---------------------------------------------------------------------------

_STORE_VERSION = 1
MANIFEST_NAME = "manifest.json"


def pack_arrays(header: dict, arrays: list[np.ndarray]) -> bytes:
    """Serialize named float64 arrays behind a one-line JSON header."""
    meta = dict(header)
    meta["format_version"] = _STORE_VERSION
    meta["shapes"] = [list(a.shape) for a in arrays]
    payload = json.dumps(meta, sort_keys=True).encode("utf-8") + b"\n"
    for a in arrays:
        payload += np.ascontiguousarray(a, dtype=np.float64).tobytes()
    return payload


def unpack_arrays(blob: bytes) -> tuple[dict, list[np.ndarray]]:
    newline = blob.index(b"\n")
    header = json.loads(blob[:newline].decode("utf-8"))
    if header.get("format_version") != _STORE_VERSION:
        raise ModelStoreError(f"unsupported model format {header.get('format_version')}")
    arrays = []
    offset = newline + 1
    for shape in header["shapes"]:
        count = int(np.prod(shape)) if shape else 1
        size = count * 8
        arr = np.frombuffer(blob[offset:offset + size], dtype="<f8").reshape(shape).copy()
        arrays.append(arr)
        offset += size
    return header, arrays


def save_model_store(models: dict, directory: str, meta: Optional[dict] = None) -> None:
    """Persist id -> bytes blobs under a checksummed manifest."""
    os.makedirs(directory, exist_ok=True)
    entries = {}
    for model_id in sorted(models):
        blob = models[model_id]
        filename = f"model_{model_id}.bin"
        with open(os.path.join(directory, filename), "wb") as fh:
            fh.write(blob)
        entries[str(model_id)] = {
            "file": filename,
            "sha256": hashlib.sha256(blob).hexdigest(),
            "bytes": len(blob),
        }
    manifest = {"version": _STORE_VERSION, "models": entries, "meta": meta or {}}
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


class ModelStore:
    """Lazy mapping over a model store directory.

    Only the manifest is read up front; each model file is opened on the
    first access of its id and verified against its checksum.
    """

    def __init__(self, directory: str):
        self.directory = directory
        manifest_path = os.path.join(directory, MANIFEST_NAME)
        if not os.path.exists(manifest_path):
            raise ModelStoreError(f"missing manifest in {directory}")
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        self.meta = manifest.get("meta", {})
        self._entries = manifest.get("models", {})
        self._cache: dict = {}

    def ids(self) -> list[str]:
        return sorted(self._entries)

    def __contains__(self, model_id) -> bool:
        return str(model_id) in self._entries

    def __getitem__(self, model_id) -> bytes:
        key = str(model_id)
        if key in self._cache:
            return self._cache[key]
        if key not in self._entries:
            raise KeyError(model_id)
        entry = self._entries[key]
        path = os.path.join(self.directory, entry["file"])
        with open(path, "rb") as fh:
            blob = fh.read()
        digest = hashlib.sha256(blob).hexdigest()
        if digest != entry["sha256"]:
            raise ModelStoreError(f"checksum mismatch for model {key} ({entry['file']})")
        self._cache[key] = blob
        return blob


def load_model_store(directory: str) -> ModelStore:
    return ModelStore(directory)
