"""Run configuration: a flat sectioned key=value text file.

Sections [grid], [physics], [experiment], [output]; unknown sections or keys
are rejected.  No expressions are evaluated: potentials and observables are
chosen by registered label with numeric parameters, keeping runs trivially
reproducible.  A parsed config serializes back to an equivalent file.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

__all__ = ["ConfigError", "RunConfig"]


class ConfigError(ValueError):
    """Malformed or invalid run configuration."""


_SCHEMA = {
    "grid": {
        "quantum_kind": str,  # discrete | continuous
        "quantum_d": int,
        "q_min": float,
        "q_max": float,
        "n_q": int,
        "x_min": float,
        "x_max": float,
        "n_x": int,
        "scheme": str,
    },
    "physics": {
        "hbar": float,
        "m_q": float,
        "m_c": float,
        "omega": float,
        "big_omega": float,
        "coupling_k": float,
    },
    "experiment": {
        "t_final": float,
        "dt": float,
        "record_every": int,
        "q0": float,
        "p0": float,
        "x0": float,
        "k0": float,
        "sigma_q": float,
        "sigma_x": float,
        "seed": int,
        "beta": float,
        "samples": int,
        "t_avg": float,
        "hamiltonian": str,
        "sampler": str,
        "operator": str,
        "state": str,
        "impulse_k": float,
        "duration": float,
        "pointer_width": float,
        "collapse_at": str,
    },
    "output": {
        "csv": str,
        "json": str,
    },
}

_POSITIVE = {"hbar", "m_q", "m_c", "omega", "big_omega", "t_final", "dt", "beta", "t_avg", "duration", "pointer_width", "sigma_q", "sigma_x"}


@dataclass
class RunConfig:
    """Validated key-value configuration grouped by section."""

    grid: dict = field(default_factory=dict)
    physics: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as err:
            raise ConfigError(f"cannot parse config: {err}") from err
        out = cls()
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            schema = _SCHEMA[section]
            bucket = getattr(out, section)
            for key, raw in parser.items(section):
                if key not in schema:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                typ = schema[key]
                try:
                    value = typ(raw) if typ is not str else raw.strip()
                except ValueError as err:
                    raise ConfigError(f"bad value for {key!r} in [{section}]: {raw!r}") from err
                if key in _POSITIVE and isinstance(value, (int, float)) and value <= 0:
                    raise ConfigError(f"{key!r} must be positive, got {value!r}")
                bucket[key] = value
        return out

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def require(self, section: str, *keys) -> None:
        bucket = getattr(self, section)
        missing = [k for k in keys if k not in bucket]
        if missing:
            raise ConfigError(f"missing required key(s) {missing} in section [{section}]")

    def to_text(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for section in ("grid", "physics", "experiment", "output"):
            bucket = getattr(self, section)
            if bucket:
                parser[section] = {k: repr(v) if not isinstance(v, str) else v for k, v in bucket.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()
