"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import inspect
import math
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .model import ZOO
from .solution import TIMINGS

KINDS = ("solve", "rates", "coupling", "moments", "validate")


@dataclass
class ExperimentConfig:
    model: str
    model_params: dict = field(default_factory=dict)
    kind: str = "solve"
    T: float = 1.0
    K: int = 50
    d: int = 1
    m: int = 1
    n: list = field(default_factory=lambda: [64, 128, 256, 512, 1024])
    M: int = 32
    n_ref: int = 4096
    R: int = 4
    p: float = 8.0
    q: int = 2
    J: int = 2
    ridge: float | None = None
    measure_timing: str = "explicit"
    alpha: float | None = None
    tol: float = 1e-4
    max_iter: int = 20
    seed: int | None = None
    out: str = "out"
    dump_bundle: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Rebuild (and re-validate) a config from :meth:`to_dict` output."""
        return parse_config(to_text(cls(**data)))


def to_text(config: ExperimentConfig) -> str:
    """Render a config in the file format; ``parse_config`` inverts it."""
    lines = []
    for f in fields(config):
        value = getattr(config, f.name)
        if f.name == "model_params":
            lines.extend(f"model.{k} = {_render(v)}" for k, v in sorted(value.items()))
        elif value is not None:
            lines.append(f"{f.name} = {_render(value)}")
    return "\n".join(lines) + "\n"


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ", ".join(_render(v) for v in value)
    return str(value)


# -- value parsers ----------------------------------------------------------


def _int(text):
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"expected an integer, got {text!r}") from None
    if not value.is_integer():
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _float(text):
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"expected a number, got {text!r}") from None
    if not math.isfinite(value):
        raise ValueError(f"expected a finite number, got {text!r}")
    return value


def _optional_float(text):
    return None if text.lower() in ("none", "") else _float(text)


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _int_list(text):
    items = [t.strip() for t in text.split(",")]
    if not all(items):
        raise ValueError(f"empty entry in list {text!r}")
    return [_int(t) for t in items]


def _choice(options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {list(options)}, got {text!r}")
        return text
    return parse


def _string(text):
    if not text:
        raise ValueError("expected a non-empty value")
    return text


def _positive(v):
    return v > 0


def _at_least(lo):
    return lambda v: v >= lo


_FIELDS = {
    "model": (_choice(tuple(ZOO)), None, ""),
    "kind": (_choice(KINDS), None, ""),
    "T": (_float, _positive, "must be positive"),
    "K": (_int, _at_least(1), "must be >= 1"),
    "d": (_int, _at_least(1), "must be >= 1"),
    "m": (_int, _at_least(1), "must be >= 1"),
    "n": (_int_list, lambda v: all(x >= 1 for x in v) and all(b > a for a, b in zip(v, v[1:])),
          "must be positive and strictly increasing"),
    "M": (_int, _at_least(1), "must be >= 1"),
    "n_ref": (_int, _at_least(1), "must be >= 1"),
    "R": (_int, _at_least(1), "must be >= 1"),
    "p": (_float, _at_least(2), "must be >= 2"),
    "q": (_int, _at_least(1), "must be >= 1"),
    "J": (_int, _at_least(1), "must be >= 1"),
    "ridge": (_optional_float, lambda v: v is None or v >= 0, "must be nonnegative"),
    "measure_timing": (_choice(TIMINGS), None, ""),
    "alpha": (_optional_float, lambda v: v is None or v > 0, "must be positive"),
    "tol": (_float, _positive, "must be positive"),
    "max_iter": (_int, _at_least(1), "must be >= 1"),
    "seed": (_int, _at_least(0), "must be nonnegative"),
    "out": (_string, None, ""),
    "dump_bundle": (_bool, None, ""),
}


def split_assignment(text: str, line=None) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"expected 'key = value', got {text.strip()!r}", line=line)
    key, value = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError("missing key before '='", line=line)
    return key, value.strip()


def parse_config(text: str, overrides=()) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``overrides`` are ``key=value`` strings applied last.

    ``#`` starts a comment, lists are comma-separated and model parameters are
    written ``model.<name> = value``. Errors name the line and key.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, value = split_assignment(body, lineno)
        if key in raw:
            raise ConfigError(f"duplicate key (first set on line {raw[key][1]})", key, lineno)
        raw[key] = (value, lineno)
    for item in overrides:
        key, value = split_assignment(item)
        raw[key] = (value, None)

    values, params = {}, {}
    for key, (value, lineno) in raw.items():
        if key.startswith("model."):
            name = key[len("model."):]
            if not name.isidentifier():
                raise ConfigError("invalid model parameter name", key, lineno)
            try:
                params[name] = _float(value)
            except ValueError as exc:
                raise ConfigError(str(exc), key, lineno) from None
            continue
        if key not in _FIELDS:
            raise ConfigError("unknown key", key, lineno)
        parser, check, why = _FIELDS[key]
        try:
            parsed = parser(value)
        except ValueError as exc:
            raise ConfigError(str(exc), key, lineno) from None
        if check is not None and not check(parsed):
            raise ConfigError(f"value {value!r} {why}", key, lineno)
        values[key] = parsed

    if "model" not in values:
        raise ConfigError("missing required key", "model")
    config = ExperimentConfig(model_params=params, **values)
    _check_model_params(config, raw)
    return config


def _check_model_params(config: ExperimentConfig, raw: dict):
    accepted = set(inspect.signature(ZOO[config.model]).parameters) - {"d"}
    for name in config.model_params:
        if name not in accepted:
            key = f"model.{name}"
            raise ConfigError(f"model {config.model!r} takes parameters {sorted(accepted)}",
                              key, raw[key][1])
