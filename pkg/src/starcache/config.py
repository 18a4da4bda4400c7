"""Run configuration: defaults, config file, environment, CLI flags.

Precedence, lowest to highest: built-in defaults, config file (flat
``key = value`` lines), ``STARCACHE_*`` environment variables, explicit
flag values.  Every consumer echoes the effective configuration into
its output header so a result file is reproducible from its own
preamble plus the seed.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from typing import Mapping

from .core import CacheGeometry, Rng
from .hierarchy import Hierarchy
from .models import MODEL_NAMES

ENV_PREFIX = "STARCACHE_"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str = "sa-lru"
    k: int | None = None                 # extra index bits, star-news only
    line_size: int = 64
    l1_lines: int = 512
    l1_assoc: int = 8
    l2_lines: int = 4096
    l2_assoc: int = 8
    l1_hit_cycles: int = 1
    l2_hit_cycles: int = 12
    memory_cycles: int = 100
    mshr_entries: int = 16
    seed: int = 1
    trials: int | None = None            # None: the harness default
    window_capacity: int = 64
    clear_specbit_on_commit: bool = False
    debug_checks: bool = False
    dip_threshold_cycles: float = 6.0
    vote_threshold: float = 0.5
    noise_sigma: float = 0.0
    out_dir: str = "out"

    def validate(self) -> "RunConfig":
        if self.model not in MODEL_NAMES:
            raise ConfigError(
                f"unknown model {self.model!r}; choose from {', '.join(MODEL_NAMES)}")
        if self.k is not None:
            if self.model != "star-news":
                raise ConfigError("k only applies to star-news")
            if not 0 <= self.k <= 16:
                raise ConfigError(f"k must be 0..16, got {self.k}")
        for name in ("l1_hit_cycles", "l2_hit_cycles", "memory_cycles"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.mshr_entries < 1:
            raise ConfigError("mshr_entries must be at least 1")
        if self.window_capacity < 1:
            raise ConfigError("window_capacity must be at least 1")
        if self.trials is not None and self.trials < 1:
            raise ConfigError("trials must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if not 0.0 < self.vote_threshold <= 1.0:
            raise ConfigError("vote_threshold must lie in (0, 1]")
        if self.dip_threshold_cycles < 0:
            raise ConfigError("dip_threshold_cycles must be non-negative")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        try:
            self.l1_geometry()
            self.l2_geometry()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    @property
    def effective_k(self) -> int:
        if self.model != "star-news":
            return 0
        return 4 if self.k is None else self.k

    def l1_geometry(self) -> CacheGeometry:
        return CacheGeometry(self.line_size, self.l1_lines, self.l1_assoc,
                             self.effective_k)

    def l2_geometry(self) -> CacheGeometry:
        return CacheGeometry(self.line_size, self.l2_lines, self.l2_assoc, 0)

    def make_rng(self) -> Rng:
        return Rng(self.seed)

    def build_hierarchy(self, rng: Rng, **model_tweaks) -> Hierarchy:
        return Hierarchy(self.model, self.l1_geometry(), self.l2_geometry(),
                         rng, self.l1_hit_cycles, self.l2_hit_cycles,
                         self.memory_cycles, self.mshr_entries,
                         self.debug_checks, **model_tweaks)

    def echo_items(self) -> list[tuple[str, str]]:
        """Stable key/value pairs for output file headers."""
        items = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                s = "none"
            elif isinstance(v, bool):
                s = "true" if v else "false"
            else:
                s = str(v)
            items.append((f.name, s))
        return items


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str, where: str):
    f = _FIELDS[name]
    text = raw.strip()
    base = {"model": str, "out_dir": str,
            "k": int, "trials": int}.get(name, f.type)
    if base in (int, "int", "int | None"):
        base = int
    elif base in (float, "float"):
        base = float
    elif base in (bool, "bool"):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{where}: {name} wants a boolean, got {raw!r}")
    if base is str or base in ("str", "str | None"):
        return text
    try:
        return base(text)
    except ValueError:
        raise ConfigError(
            f"{where}: {name} wants {base.__name__}, got {raw!r}") from None


def parse_config_file(path: str) -> dict:
    """Flat `key = value` lines; '#' comments; unknown keys rejected."""
    values: dict = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
        values[key] = _coerce(key, val, f"{path}:{line_no}")
    return values


def env_overrides(env: Mapping[str, str] | None = None) -> dict:
    env = os.environ if env is None else env
    values: dict = {}
    for key in sorted(env):
        if not key.startswith(ENV_PREFIX):
            continue
        field = key[len(ENV_PREFIX):].lower()
        if field in _FIELDS:
            values[field] = _coerce(field, env[key], key)
    return values


def load_config(path: str | None = None,
                env: Mapping[str, str] | None = None,
                overrides: Mapping[str, object] | None = None) -> RunConfig:
    """Merge the three external layers over the defaults and validate."""
    merged: dict = {}
    if path is not None:
        merged.update(parse_config_file(path))
    merged.update(env_overrides(env))
    if overrides:
        for key, val in overrides.items():
            if val is None:
                continue
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = val
    return RunConfig(**merged).validate()
