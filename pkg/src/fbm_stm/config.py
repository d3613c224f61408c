"""INI run configuration.

Sections and keys are fixed; anything unknown is rejected. Values are typed
on parse, so two configs compare equal exactly when they describe the same
run. :meth:`RunConfig.dumps` writes a file that parses back to an equal
object.
"""

from __future__ import annotations

import configparser
import itertools
import math
from dataclasses import dataclass
from typing import Mapping

from .errors import ConfigError

__all__ = ["RunConfig", "SCHEMA", "REQUIRED", "MAX_SCAN_CELLS"]

MAX_SCAN_CELLS = 1024
REQUIRED = object()


def _float(text):
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("must be finite")
    return value


def _int(text):
    return int(text.strip())


def _kappa(text):
    text = text.strip()
    return "2H" if text.upper() == "2H" else _float(text)


def _choice(*options):
    def parse(text):
        text = text.strip().lower()
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return text

    return parse


def _optional(parse):
    def wrapped(text):
        text = text.strip()
        return None if text.lower() in ("", "auto", "none") else parse(text)

    return wrapped


def _list(parse):
    def wrapped(text):
        items = [t for t in (s.strip() for s in text.split(",")) if t]
        if not items:
            raise ValueError("empty list")
        return tuple(parse(t) for t in items)

    return wrapped


MODEL_KINDS = ("linear", "cubic_drift", "cubic_drift_sin_diffusion")

# section -> key -> (parser, default); REQUIRED marks keys without a default
SCHEMA: Mapping[str, Mapping[str, tuple]] = {
    "model": {
        "kind": (_choice(*MODEL_KINDS), "linear"),
        "lambda": (_float, REQUIRED),
        "mu": (_float, REQUIRED),
        "kappa": (_kappa, REQUIRED),
        "x0": (_float, REQUIRED),
        "convention": (_choice("canonical", "example"), "canonical"),
        "lambda_bar": (_optional(_float), None),
    },
    "scheme": {
        "theta": (_float, REQUIRED),
        "dt": (_float, REQUIRED),
        "n_steps": (_int, REQUIRED),
    },
    "fbm": {
        "hurst": (_float, REQUIRED),
        "method": (_choice("circulant", "cholesky"), "circulant"),
    },
    "ensemble": {
        "n_paths": (_int, REQUIRED),
        "master_seed": (_int, REQUIRED),
        "record_stride": (_optional(_int), None),
        "burn_in_fraction": (_float, 0.2),
    },
    "verdict": {
        "slope_tol": (_float, 0.0),
        "drop_margin": (_float, 2.0),
        "max_log_std_error": (_float, 0.5),
    },
    "output": {
        "directory": (str, "."),
        "format": (_choice("csv"), "csv"),
    },
    "scan": {
        "theta": (_optional(_list(_float)), None),
        "hurst": (_optional(_list(_float)), None),
        "kappa": (_optional(_list(_kappa)), None),
        "dt": (_optional(_list(_float)), None),
    },
}


def _format(value):
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    """Typed configuration: ``sections[section][key]``; absent required keys
    are simply missing and reported when a command asks for them."""

    sections: Mapping[str, Mapping[str, object]]

    @classmethod
    def parse_string(cls, text, overrides=()):
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError("config", str(exc).splitlines()[0]) from None
        raw = {sec: dict(parser.items(sec)) for sec in parser.sections()}
        for item in overrides:
            key, sep, value = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not (sep and dot and section and name):
                raise ConfigError(key.strip() or item, "override must look like section.key=value")
            raw.setdefault(section, {})[name] = value
        return cls.from_raw(raw)

    @classmethod
    def from_file(cls, path, overrides=()):
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
        return cls.parse_string(text, overrides)

    @classmethod
    def from_raw(cls, raw):
        sections = {}
        for section, items in raw.items():
            schema = SCHEMA.get(section)
            if schema is None:
                raise ConfigError(section, "unknown section")
            typed = {}
            for key, text in items.items():
                if key not in schema:
                    raise ConfigError(f"{section}.{key}", "unknown key")
                parse = schema[key][0]
                try:
                    typed[key] = parse(text)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{section}.{key}", f"invalid value {text!r} ({exc})") from None
            sections[section] = typed
        return cls(sections)

    def get(self, section, key):
        """Value of ``section.key``, falling back to the schema default."""
        if key in self.sections.get(section, {}):
            return self.sections[section][key]
        default = SCHEMA[section][key][1]
        if default is REQUIRED:
            raise ConfigError(f"{section}.{key}", "missing required key")
        return default

    def require(self, *keys):
        for dotted in keys:
            self.get(*dotted.split(".", 1))

    def with_values(self, **dotted):
        """Copy with ``section__key=value`` entries replaced."""
        sections = {s: dict(v) for s, v in self.sections.items()}
        for name, value in dotted.items():
            section, key = name.split("__", 1)
            sections.setdefault(section, {})[key] = value
        return RunConfig(sections)

    def dumps(self):
        lines = []
        for section in SCHEMA:
            items = self.sections.get(section)
            if items is None:
                continue
            lines.append(f"[{section}]")
            for key in SCHEMA[section]:
                if key in items:
                    lines.append(f"{key} = {_format(items[key])}")
            lines.append("")
        return "\n".join(lines)

    def scan_cells(self):
        """Cartesian product of the [scan] lists (base values where absent)."""
        axes = []
        for key, base in (("theta", ("scheme", "theta")), ("hurst", ("fbm", "hurst")),
                          ("kappa", ("model", "kappa")), ("dt", ("scheme", "dt"))):
            values = self.sections.get("scan", {}).get(key)
            axes.append(values if values is not None else (self.get(*base),))
        cells = list(itertools.product(*axes))
        if len(cells) > MAX_SCAN_CELLS:
            raise ConfigError("scan", f"{len(cells)} cells exceed the limit of {MAX_SCAN_CELLS}")
        return cells

