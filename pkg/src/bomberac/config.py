"""Run configuration: defaults, flat key=value config files, CLI overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .errors import ConfigError

VARIANTS = ("A3C", "A3C-TP", "PI-A3C", "PI-A3C-TP")
THREAD_CAP_ENV = "BAC_THREADS"


@dataclass
class RunConfig:
    variant: str = "A3C"
    workers: int = 8
    demonstrators: int = -1       # -1: derive from the variant (1 for PI runs)
    board_size: int = 8
    max_steps: int = 800
    opponent: str = "static"
    seed: int = 1
    episodes: int = 1000
    max_seconds: float = 0.0   # optional wall-clock budget; 0 disables
    # loss weights and segment length
    t_max: int = 20
    gamma: float = 0.999
    w_policy: float = 1.0
    w_value: float = 0.5
    w_entropy: float = 0.01
    lambda_tp: float = 1.0
    grad_clip: float = 40.0
    # optimizer
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-5
    weight_decay: float = 1e-5
    # demonstrator search
    rollouts: int = 75
    rollout_depth: int = 24
    ucb_c: float = 1.25
    # bookkeeping
    run_dir: str = ""
    checkpoint_interval: int = 1000
    deterministic: bool = False

    def resolved(self):
        """Validated copy with derived fields filled in."""
        cfg = RunConfig(**{f.name: getattr(self, f.name) for f in fields(self)})
        if cfg.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, "
                              f"got {cfg.variant!r}")
        cap = os.environ.get(THREAD_CAP_ENV)
        if cap:
            try:
                cfg.workers = min(cfg.workers, max(1, int(cap)))
            except ValueError:
                raise ConfigError(f"{THREAD_CAP_ENV} must be an integer, "
                                  f"got {cap!r}")
        pi_variant = cfg.variant.startswith("PI-")
        if cfg.demonstrators < 0:
            cfg.demonstrators = 1 if pi_variant else 0
        if pi_variant and cfg.demonstrators < 1:
            raise ConfigError(f"{cfg.variant} needs at least one demonstrator")
        if not pi_variant and cfg.demonstrators != 0:
            raise ConfigError(f"{cfg.variant} must run without demonstrators "
                              f"(got demonstrators={cfg.demonstrators})")
        if cfg.workers < 1:
            raise ConfigError("workers must be >= 1")
        if cfg.demonstrators > cfg.workers:
            raise ConfigError("more demonstrators than workers")
        if cfg.deterministic and cfg.workers != 1:
            raise ConfigError("deterministic mode requires exactly 1 worker")
        if cfg.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        if cfg.max_seconds < 0:
            raise ConfigError("max_seconds must be >= 0")
        if cfg.board_size < 6:
            raise ConfigError("board_size must be >= 6")
        if cfg.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if not cfg.run_dir:
            cfg.run_dir = os.path.join(
                "runs", f"{cfg.variant.lower()}-s{cfg.seed}")
        return cfg


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, raw):
    kind = _FIELD_TYPES.get(key)
    if kind is None:
        raise ConfigError(f"unknown config key {key!r}")
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}")
    return raw


def parse_overrides(pairs):
    """key=value strings (CLI --override) into a typed dict."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        key = key.strip()
        out[key] = _coerce(key, raw)
    return out


def load_config(path=None, overrides=()):
    """Build a RunConfig from an optional file plus key=value overrides.

    The file format is one `key = value` per line with `#` comments; keys
    mirror the CLI override names. Later sources win: defaults, then the
    file, then overrides.
    """
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}")
        for lineno, line in enumerate(lines, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected key = value, "
                                  f"got {line.rstrip()!r}")
            key, raw = body.split("=", 1)
            values[key.strip()] = _coerce(key.strip(), raw)
    values.update(parse_overrides(overrides))
    return RunConfig(**values).resolved()
