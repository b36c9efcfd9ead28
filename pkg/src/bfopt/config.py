"""Plain-text ``key = value`` configuration files mapped onto dataclasses."""
from __future__ import annotations

import dataclasses
import os
import typing
from pathlib import Path

SEED_ENV = "BFOPT_SEED"


class ConfigError(ValueError):
    pass


def default_seed(fallback: int = 0) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return fallback
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw
        if origin in (tuple, list):
            (inner, *_) = typing.get_args(tp)
            items = [s.strip() for s in raw.split(",") if s.strip()]
            vals = [_coerce(s, inner, key) for s in items]
            return tuple(vals) if origin is tuple else vals
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {tp}") from exc
    raise ConfigError(f"{key}: unsupported field type {tp}")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    return str(value)


def from_flat(cls, values: dict[str, str], prefix: str = ""):
    """Build dataclass ``cls`` from a flat dict; nested dataclasses use ``section.key`` names."""
    hints = typing.get_type_hints(cls)
    kwargs = {}
    consumed = set()
    for f in dataclasses.fields(cls):
        tp = hints[f.name]
        key = prefix + f.name
        if dataclasses.is_dataclass(tp):
            sub = {k: v for k, v in values.items() if k.startswith(key + ".")}
            kwargs[f.name] = from_flat(tp, sub, key + ".")
            consumed |= set(sub)
        elif key in values:
            kwargs[f.name] = _coerce(values[key], tp, key)
            consumed.add(key)
    unknown = set(values) - consumed
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return cls(**kwargs)


def to_flat(obj, prefix: str = "") -> dict[str, str]:
    out: dict[str, str] = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            out.update(to_flat(value, prefix + f.name + "."))
        else:
            out[prefix + f.name] = _format(value)
    return out


def load(cls, path: str | Path):
    return from_flat(cls, parse_kv(Path(path).read_text(encoding="utf-8")))


def dumps(obj) -> str:
    return "".join(f"{k} = {v}\n" for k, v in to_flat(obj).items())


def atomic_write(path: str | Path, data: str | bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    if isinstance(data, str):
        tmp.write_text(data, encoding="utf-8")
    else:
        tmp.write_bytes(data)
    os.replace(tmp, path)
