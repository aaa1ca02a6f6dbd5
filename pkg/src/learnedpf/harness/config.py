"""Experiment configuration: a flat INI file with three sections.

Grammar (every key optional except ``scenario``)::

    [experiment]
    scenario = linear-gaussian          ; one of the scenario tags
    N = 10, 25, 50                       ; comma-separated grids
    M =                                  ; empty means N - 2 (graph) or 2 (SIR)
    T = 12
    K = 10, 20, 30, 40, 50
    snr_db = 5
    proposals = bootstrap, min-degeneracy, mlp
    seeds = 20                           ; outer repetitions
    inner = 100                          ; filter runs averaged per estimate
    threshold_ratio = 0.3333333333333333
    seed = 0
    out = results

    [training]
    epochs = 200
    lr = 0.001
    beta1 = 0.9
    beta2 = 0.999
    particles = 10
    clip_norm = 10
    detach_states = true

    [architecture]
    hidden = 256, 512, 1024
    rnn_hidden = 1024
    gnn_hidden = 256, 512, 1024
    gnn_order = 3
    psi_layers = 9
    scale = 1                            ; or auto: RMS of the measurements
    mean_scale =                         ; empty: same as scale; auto: state noise std
    cov_scale =                          ; empty: same as mean_scale; auto: state noise std
    skip = false

Unknown sections or keys are rejected.  Presets override the loaded values.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Union

from ..errors import ConfigError
from ..proposals.learned import FAMILIES as LEARNED_FAMILIES
from ..ssm import SCENARIOS
from ..training import TrainConfig

BASELINES = ("bootstrap", "min-degeneracy")
PROPOSALS = BASELINES + LEARNED_FAMILIES
PRESETS = ("desk", "full")

Scale = Union[float, str, None]


@dataclass(frozen=True)
class ArchitectureConfig:
    hidden: tuple = (256, 512, 1024)
    rnn_hidden: int = 1024
    gnn_hidden: tuple = (256, 512, 1024)
    gnn_order: int = 3
    psi_layers: int = 9
    scale: Scale = 1.0
    mean_scale: Scale = None
    cov_scale: Scale = None
    skip: bool = False

    def __post_init__(self):
        for name in ("hidden", "gnn_hidden"):
            widths = getattr(self, name)
            if not widths or any(w < 1 for w in widths):
                raise ConfigError(f"{name}: widths must be positive and non-empty")
        for name in ("rnn_hidden", "psi_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.gnn_order < 0:
            raise ConfigError("gnn_order must be non-negative")
        for name in ("scale", "mean_scale", "cov_scale"):
            v = getattr(self, name)
            if name == "scale" and v is None:
                raise ConfigError("scale cannot be empty")
            if isinstance(v, str) and v != "auto":
                raise ConfigError(f"{name} must be a positive number or 'auto'")
            if isinstance(v, float) and not v > 0:
                raise ConfigError(f"{name} must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    N: tuple = (10,)
    M: Optional[int] = None
    T: tuple = (12,)
    K: tuple = (10, 20, 30, 40, 50)
    snr_db: float = 5.0
    proposals: tuple = ("bootstrap", "min-degeneracy", "mlp")
    seeds: int = 20
    inner: int = 100
    threshold_ratio: float = 1.0 / 3.0
    seed: int = 0
    out: str = "results"
    training: TrainConfig = field(default_factory=TrainConfig)
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario: unknown tag {self.scenario!r}; expected one of {SCENARIOS}")
        for name in ("N", "T", "K", "proposals"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"{name}: grid must be non-empty")
        if any(k < 1 for k in self.K):
            raise ConfigError("K: particle counts must be positive")
        if any(t < 1 for t in self.T):
            raise ConfigError("T: horizons must be at least 1")
        for p in self.proposals:
            if p not in PROPOSALS:
                raise ConfigError(f"proposals: unknown family {p!r}; expected one of {PROPOSALS}")
        if self.scenario == "sir":
            if set(self.N) != {3} or self.M not in (None, 2):
                raise ConfigError("N: the SIR scenario fixes N=3, M=2")
        else:
            if any(n < 4 for n in self.N):
                raise ConfigError("N: graph scenarios need N >= 4")
            if self.M is not None and any(self.M != n - 2 for n in self.N):
                raise ConfigError(f"M: graph scenarios use M = N - 2, got M={self.M} for N={self.N}")
        if self.seeds < 1 or self.inner < 1:
            raise ConfigError("seeds and inner must be at least 1")
        if not 0 < self.threshold_ratio <= 1:
            raise ConfigError("threshold_ratio must lie in (0, 1]")

    def M_for(self, N: int) -> int:
        return 2 if self.scenario == "sir" else N - 2


# Settings of the SIR experiment that differ from the graph experiments.
SIR_DEFAULTS = {
    "experiment": {"N": "3", "T": "200", "K": "300", "proposals": "min-degeneracy, mlp"},
    "training": {"particles": "100"},
    "architecture": {"hidden": "512, 256, 128, 32", "rnn_hidden": "2048", "psi_layers": "10",
                     "scale": "auto", "mean_scale": "auto", "cov_scale": "auto", "skip": "true"},
}

PRESET_VALUES = {
    "desk": {"seeds": 5, "inner": 20, "epochs": 50},
    "full": {"seeds": 20, "inner": 100, "epochs": 200},
}


def _ints(key, text):
    try:
        vals = tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {text!r}") from None
    return vals


def _int(key, text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def _float(key, text):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None


def _bool(key, text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _scale(key, text):
    text = text.strip()
    if text == "":
        return None
    if text == "auto":
        return "auto"
    return _float(key, text)


EXPERIMENT_KEYS = {
    "scenario": str.strip, "N": _ints, "M": None, "T": _ints, "K": _ints, "snr_db": _float,
    "proposals": None, "seeds": _int, "inner": _int, "threshold_ratio": _float, "seed": _int,
    "out": str.strip,
}
TRAINING_KEYS = {
    "epochs": _int, "lr": _float, "beta1": _float, "beta2": _float, "particles": _int,
    "clip_norm": _float, "detach_states": _bool,
}
ARCHITECTURE_KEYS = {
    "hidden": _ints, "rnn_hidden": _int, "gnn_hidden": _ints, "gnn_order": _int,
    "psi_layers": _int, "scale": _scale, "mean_scale": _scale, "cov_scale": _scale, "skip": _bool,
}
SECTIONS = {"experiment": EXPERIMENT_KEYS, "training": TRAINING_KEYS, "architecture": ARCHITECTURE_KEYS}


def _convert(key, fn, text):
    if key == "M":
        return None if text.strip() == "" else _int(key, text)
    if key == "proposals":
        return tuple(p.strip() for p in text.split(",") if p.strip())
    if fn is str.strip:
        return text.strip()
    return fn(key, text)


def parse_config(text: str, preset: Optional[str] = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
    if not parser.has_option("experiment", "scenario"):
        raise ConfigError("scenario: required key missing from [experiment]")

    raw = {s: {} for s in SECTIONS}
    if parser["experiment"]["scenario"].strip() == "sir":
        for s, values in SIR_DEFAULTS.items():
            raw[s].update(values)
    for s in parser.sections():
        raw[s].update(parser[s])
    values = {s: {k: _convert(k, SECTIONS[s][k], v) for k, v in raw[s].items()} for s in SECTIONS}

    try:
        training = TrainConfig(**values["training"])
        architecture = ArchitectureConfig(**values["architecture"])
        config = ExperimentConfig(**values["experiment"], training=training, architecture=architecture)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return apply_preset(config, preset) if preset else config


def load_config(path, preset: Optional[str] = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, preset)


def apply_preset(config: ExperimentConfig, preset: str) -> ExperimentConfig:
    if preset not in PRESET_VALUES:
        raise ConfigError(f"preset: unknown {preset!r}; expected one of {PRESETS}")
    p = PRESET_VALUES[preset]
    return replace(config, seeds=p["seeds"], inner=p["inner"],
                   training=replace(config.training, epochs=p["epochs"]))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(config: ExperimentConfig) -> str:
    """Serialize to the INI grammar; ``parse_config(dump_config(c)) == c``."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["experiment"] = {f.name: _fmt(getattr(config, f.name)) for f in fields(config)
                            if f.name in EXPERIMENT_KEYS}
    parser["training"] = {k: _fmt(getattr(config.training, k)) for k in TRAINING_KEYS}
    parser["architecture"] = {k: _fmt(getattr(config.architecture, k)) for k in ARCHITECTURE_KEYS}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
