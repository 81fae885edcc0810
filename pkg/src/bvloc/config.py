"""Run configuration and the key=value config file.

A config file holds one ``key = value`` per line; ``#`` starts a comment.
Keys are the flat field names of :class:`Config` (for example ``g``,
``n_orient``, ``fast_threshold``, ``ransac_inlier_px``). Unknown keys are an
error so typos do not pass silently.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .bvft import BvftConfig
from .loggabor import LogGaborParams


@dataclass(frozen=True)
class RegistrationConfig:
    ratio: float = 0.9
    inlier_px: float = 2.5
    max_iters: int = 2000
    confidence: float = 0.999
    icp: bool = True
    icp_max_iter: int = 100
    icp_tol: float = 1e-4
    icp_max_dist: float = 1.0


@dataclass(frozen=True)
class RetrievalConfig:
    words: int = 10000  # b
    kmeans_iter: int = 50
    spacing: float = 10.0  # S, meters
    recall_threshold: float = 25.0  # t, meters
    top_n: int = 25


@dataclass(frozen=True)
class Config:
    g: float = 0.4
    C: float = 50.0
    bank: LogGaborParams = field(default_factory=LogGaborParams)
    bvft: BvftConfig = field(default_factory=BvftConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    seed: int = 0

    def __post_init__(self):
        if not (self.g > 0 and self.C > 0):
            raise ValueError("g and C must be positive")


# flat key -> (section attribute or None, field name)
_SECTIONS = {"bank": LogGaborParams, "bvft": BvftConfig, "registration": RegistrationConfig, "retrieval": RetrievalConfig}
_PREFIX = {"registration": "ransac_", "retrieval": ""}


def _flat_keys() -> dict[str, tuple[str | None, str]]:
    keys: dict[str, tuple[str | None, str]] = {"g": (None, "g"), "C": (None, "C"), "seed": (None, "seed")}
    for sec, cls in _SECTIONS.items():
        for f in fields(cls):
            name = f.name
            if sec == "registration" and not name.startswith("icp"):
                name = _PREFIX[sec] + name
            keys[name] = (sec, f.name)
    return keys


FLAT_KEYS = _flat_keys()


def _coerce(raw: str, like):
    raw = raw.strip()
    if raw.lower() in ("none", "null", ""):
        return None
    if isinstance(like, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(like, int):
        return int(raw)
    val = float(raw)
    if not math.isfinite(val):
        raise ValueError(f"not a finite number: {raw!r}")
    return val


def with_overrides(cfg: Config, values: dict[str, str]) -> Config:
    """Return ``cfg`` with flat-key string overrides applied."""
    top: dict = {}
    sec_updates: dict[str, dict] = {}
    for key, raw in values.items():
        if key not in FLAT_KEYS:
            raise KeyError(f"unknown config key {key!r}")
        sec, name = FLAT_KEYS[key]
        holder = cfg if sec is None else getattr(cfg, sec)
        current = getattr(holder, name)
        if current is None:  # optional float fields
            current = 0.0
        value = _coerce(raw, current)
        if sec is None:
            top[name] = value
        else:
            sec_updates.setdefault(sec, {})[name] = value
    for sec, upd in sec_updates.items():
        top[sec] = dataclasses.replace(getattr(cfg, sec), **upd)
    return dataclasses.replace(cfg, **top)


def parse_config_text(text: str, base: Config | None = None) -> Config:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        k, v = line.split("=", 1)
        values[k.strip()] = v
    return with_overrides(base or Config(), values)


def load_config(path) -> Config:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: Config) -> str:
    lines = []
    for key, (sec, name) in FLAT_KEYS.items():
        holder = cfg if sec is None else getattr(cfg, sec)
        lines.append(f"{key} = {getattr(holder, name)}")
    return "\n".join(lines) + "\n"
