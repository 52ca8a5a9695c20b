"""Config files: a small TOML subset, parsed by hand.

Supported syntax: ``[section]`` headers, ``key = value`` pairs, ``#``
comments, and values that are strings, booleans, integers, floats, or
(possibly nested) arrays. Arrays may span lines until brackets balance.
That covers every key this package defines; anything else is rejected
with a line number rather than silently accepted.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, fields

from .network import NetworkConfig
from .training import TrainConfig

__all__ = [
    "ConfigError",
    "DataConfig",
    "Config",
    "parse_toml_subset",
    "load_config",
    "config_from_sections",
]


class ConfigError(ValueError):
    """Raised for unparseable or contract-violating config input."""


@dataclass(frozen=True)
class DataConfig:
    train_images: int = 8
    holdout_images: int = 4
    image_size: int = 96
    image_dir: str = ""

    def validate(self) -> None:
        if self.train_images < 1:
            raise ValueError(f"train_images must be >= 1, got {self.train_images}")
        if self.holdout_images < 0:
            raise ValueError(f"holdout_images must be >= 0, got {self.holdout_images}")
        if self.image_size < 1:
            raise ValueError(f"image_size must be >= 1, got {self.image_size}")


@dataclass(frozen=True)
class Config:
    network: NetworkConfig
    train: TrainConfig
    data: DataConfig


_SECTION_RE = re.compile(r"^\[([A-Za-z0-9_-]+)\]$")
_KEY_RE = re.compile(r"^([A-Za-z0-9_-]+)\s*=\s*(.*)$")


def _strip_comment(line: str) -> str:
    out = []
    in_str = False
    i = 0
    while i < len(line):
        ch = line[i]
        if in_str:
            if ch == "\\" and i + 1 < len(line):
                out.append(line[i : i + 2])
                i += 2
                continue
            if ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == "#":
            break
        out.append(ch)
        i += 1
    return "".join(out).strip()


class _ValueParser:
    def __init__(self, text: str, lineno: int):
        self.text = text
        self.pos = 0
        self.lineno = lineno

    def error(self, msg: str) -> ConfigError:
        return ConfigError(f"line {self.lineno}: {msg}")

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def parse(self):
        value = self.value()
        self.skip_ws()
        if self.pos != len(self.text):
            raise self.error(f"trailing characters after value: {self.text[self.pos:]!r}")
        return value

    def value(self):
        self.skip_ws()
        if self.pos >= len(self.text):
            raise self.error("missing value")
        ch = self.text[self.pos]
        if ch == '"':
            return self.string()
        if ch == "[":
            return self.array()
        return self.scalar()

    def string(self) -> str:
        escapes = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\"}
        self.pos += 1
        out = []
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch == "\\":
                if self.pos + 1 >= len(self.text):
                    raise self.error("dangling escape in string")
                esc = self.text[self.pos + 1]
                if esc not in escapes:
                    raise self.error(f"unsupported escape \\{esc}")
                out.append(escapes[esc])
                self.pos += 2
                continue
            if ch == '"':
                self.pos += 1
                return "".join(out)
            out.append(ch)
            self.pos += 1
        raise self.error("unterminated string")

    def array(self) -> list:
        self.pos += 1  # consume [
        items = []
        while True:
            self.skip_ws()
            if self.pos >= len(self.text):
                raise self.error("unterminated array")
            if self.text[self.pos] == "]":
                self.pos += 1
                return items
            items.append(self.value())
            self.skip_ws()
            if self.pos < len(self.text) and self.text[self.pos] == ",":
                self.pos += 1
            elif self.pos < len(self.text) and self.text[self.pos] != "]":
                raise self.error("expected ',' or ']' in array")

    def scalar(self):
        m = re.match(r"[^,\]\s]+", self.text[self.pos :])
        if m is None:
            raise self.error(f"expected a value at {self.text[self.pos:]!r}")
        tok = m.group(0)
        self.pos += len(tok)
        if tok == "true":
            return True
        if tok == "false":
            return False
        plain = tok.replace("_", "")
        try:
            if re.fullmatch(r"[+-]?\d+", plain):
                return int(plain)
            return float(plain)
        except ValueError:
            raise self.error(f"cannot parse value {tok!r}") from None


def parse_toml_subset(text: str) -> dict[str, dict[str, tuple[object, int]]]:
    """Returns {section: {key: (value, line_number)}}."""
    sections: dict[str, dict[str, tuple[object, int]]] = {}
    current: dict[str, tuple[object, int]] | None = None
    current_name = ""
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        line = _strip_comment(lines[i])
        i += 1
        if not line:
            continue
        m = _SECTION_RE.match(line)
        if m:
            name = m.group(1)
            if name in sections:
                raise ConfigError(f"line {lineno}: duplicate section [{name}]")
            current = sections.setdefault(name, {})
            current_name = name
            continue
        m = _KEY_RE.match(line)
        if not m:
            raise ConfigError(f"line {lineno}: expected '[section]' or 'key = value', got {line!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, rhs = m.group(1), m.group(2)
        # arrays may continue over following lines until brackets balance
        while rhs.count("[") - rhs.count("]") > 0:
            if i >= len(lines):
                raise ConfigError(f"line {lineno}: unterminated array for key {key!r}")
            rhs += " " + _strip_comment(lines[i])
            i += 1
        if key in current:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in [{current_name}]")
        current[key] = (_ValueParser(rhs, lineno).parse(), lineno)
    return sections


def _coerce_field(section: str, name: str, value, lineno: int, ftype: str):
    def err(expected: str):
        return ConfigError(
            f"line {lineno}: [{section}] {name} expects {expected}, got {value!r}"
        )

    if ftype == "int":
        if type(value) is not int:
            raise err("an integer")
        return value
    if ftype == "float":
        if type(value) is bool or not isinstance(value, (int, float)):
            raise err("a number")
        return float(value)
    if ftype == "bool":
        if type(value) is not bool:
            raise err("true or false")
        return value
    if ftype == "str":
        if not isinstance(value, str):
            raise err("a string")
        return value
    if ftype == "int_tuple":
        if not isinstance(value, list) or any(type(v) is not int for v in value):
            raise err("an array of integers")
        return tuple(value)
    if ftype == "pair_list":
        ok = isinstance(value, list) and all(
            isinstance(p, list) and len(p) == 2 and all(type(v) is int for v in p)
            for p in value
        )
        if not ok:
            raise err("an array of [iteration, patch_side] pairs")
        return tuple((p[0], p[1]) for p in value)
    raise AssertionError(f"unhandled field type {ftype}")


_FIELD_TYPES = {
    "encoder_blocks": "int_tuple",
    "decoder_blocks": "int_tuple",
    "heads": "int_tuple",
    "patch_schedule": "pair_list",
    "offset_scale": "float",
}


def _build_section(section: str, cls, raw: dict[str, tuple[object, int]]):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, (value, lineno) in raw.items():
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        ftype = _FIELD_TYPES.get(key)
        if ftype is None:
            base = {int: "int", float: "float", bool: "bool", str: "str"}
            ann = known[key].type
            for py, tag in base.items():
                if ann == py.__name__ or ann is py:
                    ftype = tag
                    break
        if ftype is None:
            raise AssertionError(f"no coercion rule for {section}.{key}: {known[key].type}")
        kwargs[key] = _coerce_field(section, key, value, lineno, ftype)
    return cls(**kwargs)


_SECTIONS = {"network": NetworkConfig, "train": TrainConfig, "data": DataConfig}


def config_from_sections(sections: dict[str, dict[str, tuple[object, int]]]) -> Config:
    for name in sections:
        if name not in _SECTIONS:
            raise ConfigError(
                f"unknown section [{name}] (expected one of {sorted(_SECTIONS)})"
            )
    built = {}
    for name, cls in _SECTIONS.items():
        built[name] = _build_section(name, cls, sections.get(name, {}))
    cfg = Config(network=built["network"], train=built["train"], data=built["data"])
    try:
        cfg.network.validate()
        cfg.train.validate(cfg.network.divisor)
        cfg.data.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return cfg


def load_config(path) -> Config:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return config_from_sections(parse_toml_subset(text))
