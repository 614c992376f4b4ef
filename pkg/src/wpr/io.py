"""Config files, metrics JSONL and policy snapshots."""

from __future__ import annotations

import json
import struct
from collections.abc import Iterable, Mapping
from pathlib import Path

import numpy as np

from wpr.errors import ConfigError
from wpr.trainer.loop import METRIC_FIELDS
from wpr.trainer.policy import ToyPolicy

# key -> converter; hyphens and underscores are interchangeable in keys
CONFIG_KEYS = {
    "lambda": float,
    "beta": float,
    "k1": int,
    "k2": int,
    "sinkhorn_iters": int,
    "tol": float,
    "regularizer": str,
    "divergence": str,
    "metric": str,
    "seed": int,
    "steps": int,
    "batch": int,
    "temperature": float,
    "out": str,
    "embeddings": str,
    "gamma": float,
    "lambda_gae": float,
    "clip_ratio": float,
    "value_clip": float,
    "lr_policy": float,
    "lr_value": float,
    "max_response_len": int,
    "dummy_cost": float,
    "sft_steps": int,
    "clamp_low": float,
    "clamp_high": float,
    "regularizers": str,
}


def _norm_key(key: str) -> str:
    return key.strip().replace("-", "_")


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines.

    Blank lines and lines starting with ``#`` are ignored. Unknown keys,
    duplicate keys and unparsable values raise :class:`ConfigError` carrying
    the 1-based line number and the field name.
    """
    out: dict = {}
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, _, value = line.partition("=")
        key = _norm_key(key)
        value = value.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError("unknown key", line=lineno, field=key)
        if key in seen:
            raise ConfigError(f"duplicate key (first set on line {seen[key]})", line=lineno, field=key)
        if not value:
            raise ConfigError("missing value", line=lineno, field=key)
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError:
            kind = CONFIG_KEYS[key].__name__
            raise ConfigError(f"cannot read {value!r} as {kind}", line=lineno, field=key) from None
        seen[key] = lineno
    return out


def load_config(path: str | Path | None, overrides: Mapping | None = None) -> dict:
    """Read a config file (if given) and apply non-``None`` overrides on top."""
    cfg: dict = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}") from None
        cfg = parse_config_text(text)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[_norm_key(key)] = value
    return cfg


def format_record(rec: Mapping) -> str:
    """One metrics line with the fixed field order and 17 significant digits."""
    parts = []
    for name in METRIC_FIELDS:
        v = rec[name]
        if name == "step":
            parts.append(f'"{name}": {int(v)}')
        else:
            parts.append(f'"{name}": {float(v):.17g}')
    return "{" + ", ".join(parts) + "}"


def write_metrics(path: str | Path, records: Iterable[Mapping]) -> None:
    lines = [format_record(r) for r in records]
    Path(path).write_text("".join(ln + "\n" for ln in lines), encoding="utf-8")


def read_metrics(path: str | Path) -> list[dict]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad metrics line: {exc.msg}", line=lineno) from None
    return rows


SNAPSHOT_MAGIC = b"WPR1"
_HEADER = struct.Struct("<4sQQ")


def save_snapshot(path: str | Path, policy: ToyPolicy) -> None:
    """Write magic ``WPR1``, ``d`` and ``c`` as little-endian u64, then the logits."""
    body = np.ascontiguousarray(policy.logits, dtype="<f8").tobytes()
    Path(path).write_bytes(_HEADER.pack(SNAPSHOT_MAGIC, policy.vocab, policy.context_window) + body)


def load_snapshot(path: str | Path) -> ToyPolicy:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ConfigError("snapshot too short")
    magic, d, c = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise ConfigError(f"bad snapshot magic {magic!r}")
    expected = _HEADER.size + 8 * d ** (c + 1)
    if len(data) != expected:
        raise ConfigError(f"snapshot is {len(data)} bytes, expected {expected}")
    logits = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(d ** c, d)
    return ToyPolicy(logits.astype(np.float64), int(c), int(d))
