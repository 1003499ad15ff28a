"""Run configuration: flat ``key = value`` text with dotted section keys.

Example::

    seed = 3
    synth.n_years = 2
    train.epochs = 50
    model.kind = fcnn
    model.hidden = 32,32
    method.kind = indirect
    sensitivity.horizons = 1,2,4

Blank lines and ``#`` comments are ignored. Later assignments win, and CLI
``--set`` overrides are applied last.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .pipeline import MethodSpec
from .synthgen import SynthConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    kind: str = "lstm"
    hidden: tuple[int, int] | None = None


@dataclass(frozen=True)
class MethodSection:
    kind: str = "direct"
    target: str = "net_load"        # used by `train` only
    look_back: int = 24
    look_ahead: int = 1
    routing: str = "routed"
    hour_features: bool = False
    net_load_history: bool = True
    near_zero_fraction: float = 0.01


@dataclass(frozen=True)
class SensitivitySection:
    horizons: tuple[int, ...] = (1, 2, 4)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: str | None = None
    out: str | None = None
    checkpoint: str | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelSection = field(default_factory=ModelSection)
    method: MethodSection = field(default_factory=MethodSection)
    sensitivity: SensitivitySection = field(default_factory=SensitivitySection)

    def synth_config(self) -> SynthConfig:
        return replace(self.synth, seed=self.seed)

    def method_spec(self, **overrides) -> MethodSpec:
        from .dataset import DIRECT_FEATURES, MEASURED_FEATURES

        spec = MethodSpec(
            method=self.method.kind,
            model_kind=self.model.kind,
            look_back=self.method.look_back,
            look_ahead=self.method.look_ahead,
            direct_features=DIRECT_FEATURES if self.method.net_load_history else MEASURED_FEATURES,
            routing=self.method.routing,
            hour_features=self.method.hour_features,
            hidden_sizes=self.model.hidden,
            train=replace(self.train, seed=self.seed),
            seed=self.seed,
            near_zero_fraction=self.method.near_zero_fraction,
        )
        return replace(spec, **overrides)


_SECTIONS = {f.name for f in fields(RunConfig) if dataclasses.is_dataclass(f.default_factory)
             if f.default_factory is not dataclasses.MISSING}


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _strip_optional(tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0], True
    return tp, False


def _coerce(text: str, tp, key: str):
    tp, optional = _strip_optional(tp)
    text = text.strip()
    if optional and text.lower() in ("", "none", "null"):
        return None
    try:
        if tp is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is str:
            return text
        if typing.get_origin(tp) is tuple:
            args = typing.get_args(tp)
            item = args[0]
            return tuple(_coerce(p, item, key) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {getattr(tp, '__name__', tp)}") from None
    raise ConfigError(f"{key}: unsupported type {tp}")


def apply(cfg: RunConfig, key: str, value: str) -> RunConfig:
    parts = key.strip().split(".")
    if len(parts) == 1:
        hints = _hints(RunConfig)
        name = parts[0]
        if name not in hints or name in _SECTIONS:
            raise ConfigError(f"unknown config key {key!r}")
        return replace(cfg, **{name: _coerce(value, hints[name], key)})
    if len(parts) == 2 and parts[0] in _SECTIONS:
        section = getattr(cfg, parts[0])
        hints = _hints(type(section))
        if parts[1] not in hints or parts[1] == "seed":
            raise ConfigError(f"unknown config key {key!r}")
        try:
            new_section = replace(section, **{parts[1]: _coerce(value, hints[parts[1]], key)})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from None
        return replace(cfg, **{parts[0]: new_section})
    raise ConfigError(f"unknown config key {key!r}")


def parse(text: str, cfg: RunConfig | None = None) -> RunConfig:
    cfg = cfg or RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        cfg = apply(cfg, key, value)
    return cfg


def load(path, cfg: RunConfig | None = None) -> RunConfig:
    return parse(Path(path).read_text(), cfg)


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump(cfg: RunConfig) -> str:
    """Every resolved key, one per line, in a stable order."""
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            for sf in fields(v):
                if f.name == "synth" and sf.name == "seed":
                    continue
                if f.name == "train" and sf.name == "seed":
                    continue
                lines.append(f"{f.name}.{sf.name} = {_format_value(getattr(v, sf.name))}")
        else:
            lines.append(f"{f.name} = {_format_value(v)}")
    return "\n".join(lines) + "\n"
