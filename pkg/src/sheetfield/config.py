"""Experiment configuration: a flat INI file with one level of sections.

Values are parsed as booleans, integers, floats, comma lists or
semicolon-separated lists of comma lists, falling back to strings.  The hash
is taken over a canonical rendering (sorted sections and keys, normalised
whitespace) so cosmetic edits do not change it.
"""
import configparser
import hashlib
from dataclasses import dataclass, field

from .errors import ConfigError
from .sheet import GridSpec

SECTIONS = ("experiment", "drift", "grid", "params", "assert")


def parse_value(raw):
    text = raw.strip()
    if ";" in text:
        return [parse_value(part) for part in text.split(";") if part.strip()]
    if "," in text:
        return [parse_value(part) for part in text.split(",") if part.strip()]
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _as_list(v):
    return v if isinstance(v, list) else [v]


@dataclass
class ExperimentConfig:
    kind: str
    drift_id: str = "sign"
    drift_params: dict = field(default_factory=dict)
    grid: GridSpec = None
    seed0: int = 0
    n: int = 100
    params: dict = field(default_factory=dict)
    skip: tuple = ()
    out: str = None
    raw: dict = field(default_factory=dict, repr=False)

    def param(self, key, default=None):
        return self.params.get(key.lower(), default)

    def list_param(self, key, default):
        key = key.lower()
        return _as_list(self.params[key]) if key in self.params else list(default)

    def canonical(self):
        return canonical_text(self.raw)

    @property
    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_seed_offset(self, offset):
        raw = {k: dict(v) for k, v in self.raw.items()}
        raw.setdefault("experiment", {})["seed0"] = str(self.seed0 + int(offset))
        return from_mapping(raw)


def canonical_text(raw):
    lines = []
    for sec in sorted(raw):
        lines.append(f"[{sec}]")
        for key in sorted(raw[sec]):
            if sec == "experiment" and key == "out":
                continue
            lines.append(f"{key} = {' '.join(str(raw[sec][key]).split())}")
    return "\n".join(lines) + "\n"


def _int(sec, key, default):
    try:
        return int(sec.get(key, default))
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {sec.get(key)!r}") from None


def _float(sec, key, default):
    try:
        return float(sec.get(key, default))
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {sec.get(key)!r}") from None


def from_mapping(raw):
    # drift parameters are keyword arguments (``M``), so only [drift] keeps key case
    raw = {str(s).lower(): {(str(k) if str(s).lower() == "drift" else str(k).lower()): str(v) for k, v in kv.items()}
           for s, kv in raw.items()}
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}; allowed: {list(SECTIONS)}")
    exp = raw.get("experiment", {})
    if "kind" not in exp:
        raise ConfigError("[experiment] needs a 'kind'")
    gsec = raw.get("grid", {})
    d = _int(gsec, "d", 1)
    n_s = _int(gsec, "n_s", _int(gsec, "n", 64))
    n_t = _int(gsec, "n_t", n_s)
    try:
        grid = GridSpec(n_s, n_t, _float(gsec, "s_max", 1.0), _float(gsec, "t_max", 1.0), d)
    except ValueError as exc:
        raise ConfigError(f"bad [grid]: {exc}") from None
    dsec = dict(raw.get("drift", {}))
    drift_id = dsec.pop("id", "sign")
    skip = raw.get("assert", {}).get("skip", "")
    return ExperimentConfig(
        kind=exp["kind"].strip(),
        drift_id=drift_id.strip(),
        drift_params={k: parse_value(v) for k, v in dsec.items()},
        grid=grid,
        seed0=_int(exp, "seed0", 0),
        n=_int(exp, "n", 100),
        params={k: parse_value(v) for k, v in raw.get("params", {}).items()},
        skip=tuple(s.strip() for s in skip.split(",") if s.strip()),
        out=exp.get("out"),
        raw=raw,
    )


def load_config(path):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return from_mapping({sec: dict(parser[sec]) for sec in parser.sections()})


def parse_config_text(text):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    return from_mapping({sec: dict(parser[sec]) for sec in parser.sections()})
