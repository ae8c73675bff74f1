"""Run configuration: dotted-key text files plus CLI overrides.

The config file is plain text, one `dotted.key = value` per line, with
`#` comments. Values parse as Python literals where possible (numbers,
quoted strings, lists) and fall back to bare strings.

    follower.kind = oltw
    follower.oltw.window_sec = 2.0
    follower.oltw.references = ["ref1.mid", "ref2.mid"]
    tempo.variant = expectation
    tempo.params.eta_onset = 0.4
    accomp.balance = 0.8
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from pathlib import Path

from .followers.hmm import HmmConfig
from .followers.oltw import OltwConfig
from .pipeline import AccompanimentConfig
from .tempo import VARIANTS, TempoParams


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict[str, object]:
    """Dotted keys to parsed values."""
    out: dict[str, object] = {}
    for lineno, raw in enumerate(text.split("\n"), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        try:
            out[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            out[key] = value
    return out


def load_config_file(path: str | Path) -> dict[str, object]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text())


@dataclass
class RunConfig:
    """Everything one run needs, resolved from file plus flags."""

    mode: str = "replay"  # live | replay | eval
    follower_kind: str = "oltw"
    score_path: str | None = None
    solo_path: str | None = None
    reference_paths: list[str] = field(default_factory=list)
    alignment_paths: list[str] = field(default_factory=list)
    tempo_variant: str = "expectation"
    initial_bpm: float | None = None
    seed: int = 0
    speed: float = 1.0
    input_port: str | None = None
    output_port: str | None = None
    latency_ms: float = 0.0
    out_midi: str | None = None
    out_log: str | None = None
    hmm: HmmConfig = field(default_factory=HmmConfig)
    oltw: OltwConfig = field(default_factory=OltwConfig)
    tempo_params: TempoParams = field(default_factory=TempoParams)
    accomp: AccompanimentConfig = field(default_factory=AccompanimentConfig)
    accomp_reference: str | None = None

    def validate(self):
        if self.mode not in ("live", "replay", "eval"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.follower_kind not in ("hmm", "oltw"):
            raise ConfigError(f"unknown follower kind {self.follower_kind!r}")
        if self.tempo_variant not in VARIANTS:
            raise ConfigError(
                f"unknown tempo variant {self.tempo_variant!r}; valid: {', '.join(VARIANTS)}"
            )
        for path in filter(None, [self.score_path, self.solo_path, self.accomp_reference]):
            if not Path(path).is_file():
                raise ConfigError(f"file not found: {path}")
        for path in self.reference_paths + self.alignment_paths:
            if not Path(path).is_file():
                raise ConfigError(f"file not found: {path}")


def _replace_fields(obj, values: dict):
    import dataclasses

    valid = {f.name for f in dataclasses.fields(obj)}
    unknown = set(values) - valid
    if unknown:
        raise ConfigError(f"unknown config field(s) {sorted(unknown)} for {type(obj).__name__}")
    return dataclasses.replace(obj, **values)


def apply_config_values(cfg: RunConfig, values: dict[str, object]) -> RunConfig:
    """Apply dotted-key values from a config file onto a RunConfig."""
    scalar = {
        "follower.kind": "follower_kind",
        "tempo.variant": "tempo_variant",
        "tempo.initial_bpm": "initial_bpm",
        "seed": "seed",
        "speed": "speed",
        "io.input_port": "input_port",
        "io.output_port": "output_port",
        "io.latency_ms": "latency_ms",
        "accomp.reference": "accomp_reference",
    }
    hmm_vals: dict[str, object] = {}
    oltw_vals: dict[str, object] = {}
    tempo_vals: dict[str, object] = {}
    accomp_vals: dict[str, object] = {}
    for key, value in values.items():
        if key in scalar:
            setattr(cfg, scalar[key], value)
        elif key.startswith("follower.hmm."):
            hmm_vals[key.removeprefix("follower.hmm.")] = value
        elif key.startswith("follower.oltw."):
            if key == "follower.oltw.references":
                cfg.reference_paths = list(value)
            else:
                oltw_vals[key.removeprefix("follower.oltw.")] = value
        elif key.startswith("tempo.params."):
            tempo_vals[key.removeprefix("tempo.params.")] = value
        elif key.startswith("accomp."):
            name = key.removeprefix("accomp.")
            if name == "retime_horizon_ms":
                accomp_vals["retime_horizon"] = float(value) / 1000.0
            elif name == "velocity_ema":
                accomp_vals["velocity_ema"] = value
            else:
                accomp_vals[name] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if hmm_vals:
        cfg.hmm = _replace_fields(cfg.hmm, hmm_vals)
    if oltw_vals:
        cfg.oltw = _replace_fields(cfg.oltw, oltw_vals)
    if tempo_vals:
        cfg.tempo_params = _replace_fields(cfg.tempo_params, tempo_vals)
    if accomp_vals:
        cfg.accomp = _replace_fields(cfg.accomp, accomp_vals)
    return cfg
