"""INI configuration with flag > file > default precedence.

Example::

    [chat]
    endpoint = https://api.example.com/v1/chat/completions
    model = some-chat-model

    [image]
    endpoint = https://api.example.com/v1/images/edits
    model = some-image-model

    [embed]
    endpoint = https://api.example.com/v1/embeddings
    model = some-embedding-model
    dimension = 768

    [pipeline]
    max_iter = 3
    layout = 2x2
    return_policy = best
    run_dir = runs/latest

    [gates]
    tau_narr = 4
    tau_photo = 4
    gate_rule = min

API keys are never read from the file, only from the environment.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .errors import PreconditionError
from .plan_model import GateConfig, GridLayout

DEFAULTS = {
    "max_iter": 3,
    "layout": "2x2",
    "return_policy": "best",
    "run_dir": "runs/latest",
    "tau_narr": 4,
    "tau_photo": 4,
    "gate_rule": "min",
    "parallelism": 4,
}


@dataclass(frozen=True)
class EndpointConfig:
    endpoint: str | None = None
    model: str | None = None
    timeout: float | None = None
    dimension: int | None = None


@dataclass(frozen=True)
class Settings:
    max_iter: int
    layout: GridLayout
    return_policy: str
    run_dir: Path
    gates: GateConfig
    parallelism: int
    chat: EndpointConfig = field(default_factory=EndpointConfig)
    image: EndpointConfig = field(default_factory=EndpointConfig)
    embed: EndpointConfig = field(default_factory=EndpointConfig)


def read_config(path: str | Path | None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise PreconditionError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise PreconditionError(f"bad config {path}: {exc}") from exc
    return parser


def _endpoint(parser: configparser.ConfigParser, name: str) -> EndpointConfig:
    if not parser.has_section(name):
        return EndpointConfig()
    sec = parser[name]
    try:
        timeout = sec.getfloat("timeout")
        dimension = sec.getint("dimension")
    except ValueError as exc:
        raise PreconditionError(f"[{name}] {exc}") from exc
    return EndpointConfig(sec.get("endpoint"), sec.get("model"), timeout, dimension)


def resolve(flags: dict, parser: configparser.ConfigParser) -> Settings:
    """Merge CLI ``flags`` (None means unset) over the file over DEFAULTS."""

    def pick(key: str, section: str, cast):
        if flags.get(key) is not None:
            value = flags[key]
        elif parser.has_option(section, key):
            value = parser.get(section, key)
        else:
            value = DEFAULTS[key]
        try:
            return cast(value)
        except (TypeError, ValueError) as exc:
            raise PreconditionError(f"invalid {key}: {value!r}") from exc

    max_iter = pick("max_iter", "pipeline", int)
    if max_iter < 1:
        raise PreconditionError("max_iter must be >= 1")
    return_policy = pick("return_policy", "pipeline", str)
    if return_policy not in ("best", "last"):
        raise PreconditionError(f"return_policy must be best or last, got {return_policy!r}")
    gates = GateConfig(pick("tau_narr", "gates", int), pick("tau_photo", "gates", int),
                       pick("gate_rule", "gates", str))
    parallelism = pick("parallelism", "pipeline", int)
    if parallelism < 1:
        raise PreconditionError("parallelism must be >= 1")
    return Settings(
        max_iter=max_iter,
        layout=pick("layout", "pipeline", GridLayout.parse),
        return_policy=return_policy,
        run_dir=pick("run_dir", "pipeline", Path),
        gates=gates,
        parallelism=parallelism,
        chat=_endpoint(parser, "chat"),
        image=_endpoint(parser, "image"),
        embed=_endpoint(parser, "embed"),
    )
