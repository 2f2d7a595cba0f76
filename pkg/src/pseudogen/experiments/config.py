"""Plain-text run configuration.

INI-style sections ``[potential]``, ``[dynamics]``, ``[grid]`` and
``[experiment]`` with ``key = value`` lines; ``#`` starts a comment. Lists
are comma separated. Every validation error names the file and line.

    [potential]
    name = double_well_1d

    [dynamics]
    beta = 1.0
    gamma = 5.0
    mass = 1.0
    dt = 0.001

    [grid]
    n_cells = 256

    [experiment]
    lag = 0.2
    n_per_cell = 2000
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

from ..potentials import PotentialModel, model_from_key
from ..sde import SimConfig

SECTIONS = ("potential", "dynamics", "grid", "experiment")

# keys accepted per section; the potential section also takes factory parameters
KNOWN_KEYS = {
    "dynamics": {"beta", "gamma", "mass", "dt", "seed"},
    "grid": {"n_cells", "n_q", "n_hermite"},
    "experiment": {
        "lag", "n_per_cell", "n_modes", "propagator", "epsilons", "nu", "t_step", "t_max", "tolerance",
        "n_max", "t_values", "threshold", "gammas", "smoluchowski_lag", "subspace",
    },
}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with ``path:line:``."""


@dataclass
class RunConfig:
    path: str
    text: str
    values: dict[str, dict[str, str]]
    lines: dict[tuple[str, str], int] = field(default_factory=dict)
    section_lines: dict[str, int] = field(default_factory=dict)

    def _where(self, section: str, key: str | None = None) -> str:
        line = self.lines.get((section, key)) if key else None
        line = line or self.section_lines.get(section, 0)
        return f"{self.path}:{line}"

    def error(self, section: str, key: str | None, message: str) -> ConfigError:
        label = f"[{section}] {key}" if key else f"[{section}]"
        return ConfigError(f"{self._where(section, key)}: {label}: {message}")

    def has(self, section: str, key: str) -> bool:
        return key in self.values.get(section, {})

    def get_str(self, section: str, key: str, default: str | None = None) -> str:
        try:
            return self.values[section][key]
        except KeyError:
            if default is None:
                raise self.error(section, key, "required key missing") from None
            return default

    def get_float(self, section: str, key: str, default: float | None = None, *, positive: bool = False) -> float:
        if not self.has(section, key):
            if default is None:
                raise self.error(section, key, "required key missing")
            return float(default)
        raw = self.values[section][key]
        try:
            v = float(raw)
        except ValueError:
            raise self.error(section, key, f"expected a number, got {raw!r}") from None
        if positive and not v > 0:
            raise self.error(section, key, f"must be positive, got {raw}")
        return v

    def get_int(self, section: str, key: str, default: int | None = None, *, minimum: int | None = None) -> int:
        if not self.has(section, key):
            if default is None:
                raise self.error(section, key, "required key missing")
            return int(default)
        raw = self.values[section][key]
        try:
            v = int(raw)
        except ValueError:
            raise self.error(section, key, f"expected an integer, got {raw!r}") from None
        if minimum is not None and v < minimum:
            raise self.error(section, key, f"must be at least {minimum}, got {v}")
        return v

    def get_floats(self, section: str, key: str, default=None, *, positive: bool = False) -> list[float]:
        if not self.has(section, key):
            if default is None:
                raise self.error(section, key, "required key missing")
            return [float(x) for x in default]
        raw = self.values[section][key]
        out = []
        for part in raw.split(","):
            part = part.strip()
            try:
                v = float(part)
            except ValueError:
                raise self.error(section, key, f"expected comma-separated numbers, got {part!r}") from None
            if positive and not v > 0:
                raise self.error(section, key, f"entries must be positive, got {part}")
            out.append(v)
        if not out:
            raise self.error(section, key, "empty list")
        return out

    def get_choice(self, section: str, key: str, choices, default: str) -> str:
        v = self.get_str(section, key, default)
        if v not in choices:
            raise self.error(section, key, f"expected one of {sorted(choices)}, got {v!r}")
        return v

    def model(self) -> PotentialModel:
        sec = self.values.get("potential", {})
        name = self.get_str("potential", "name", "double_well_1d")
        params = {}
        for k, raw in sec.items():
            if k == "name":
                continue
            try:
                params[k] = float(raw) if "," not in raw else [float(x) for x in raw.split(",")]
            except ValueError:
                raise self.error("potential", k, f"expected a number or list, got {raw!r}") from None
        try:
            return model_from_key(name, **params)
        except (TypeError, ValueError) as exc:
            raise self.error("potential", "name", str(exc)) from None

    def sim_config(self, seed: int | None = None) -> SimConfig:
        s = seed if seed is not None else self.get_int("dynamics", "seed", 0, minimum=0)
        try:
            return SimConfig(
                beta=self.get_float("dynamics", "beta", 1.0, positive=True),
                gamma=self.get_float("dynamics", "gamma", 1.0, positive=True),
                mass=self.get_float("dynamics", "mass", 1.0, positive=True),
                dt=self.get_float("dynamics", "dt", 1e-3, positive=True),
                master_seed=int(s),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise self.error("dynamics", None, str(exc)) from None


_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def parse_config(text: str, path: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=path)
    # subclass of ParsingError, so it must come first
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: key outside any section") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"{path}:{lineno}: cannot parse line {line.strip()!r}") from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: [{exc.section}] {exc.option}: duplicate key") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: [{exc.section}]: duplicate section") from None
    lines: dict[tuple[str, str], int] = {}
    section_lines: dict[str, int] = {}
    current = None
    for i, raw in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(raw)
        if m:
            current = m.group(1).strip()
            section_lines[current] = i
            continue
        m = _KEY_RE.match(raw)
        if m and current is not None and not raw[:1].isspace():
            lines[(current, m.group(1).strip().lower())] = i
    values = {s: dict(parser[s]) for s in parser.sections()}
    cfg = RunConfig(path, text, values, lines, section_lines)
    for s in values:
        if s not in SECTIONS:
            raise ConfigError(f"{path}:{section_lines.get(s, 0)}: [{s}]: unknown section; expected {list(SECTIONS)}")
    for s, known in KNOWN_KEYS.items():
        for k in values.get(s, {}):
            if k not in known:
                raise cfg.error(s, k, f"unknown key; expected one of {sorted(known)}")
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}:0: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path))
