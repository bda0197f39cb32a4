"""Scenario descriptions and their key-value file format.

A config file is INI-style with one ``[scenario]`` section::

    [scenario]
    experiment = bulk            ; migration-time | bulk | webperf
    orbit = GEO                  ; GEO | LEO
    loss = 0.1%                  ; fraction (0.001) or percentage (0.1%)
    mode = smaq-pep              ; quic | smaq-pep
    pep_count = 2                ; 0 for quic, 1 or 2 for smaq-pep
    repetitions = 5
    seed = 1
    checkpoints = 10, 20, 30     ; bulk only, seconds after the Initial
    manifest = google            ; webperf only, built-in name or JSON path
"""
import configparser
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

from ..errors import ConfigError

EXPERIMENTS = ("migration-time", "bulk", "webperf")
MODES = ("quic", "smaq-pep")
ORBITS = ("GEO", "LEO")
DEFAULT_CHECKPOINTS = (10.0, 20.0, 30.0)
SECTION = "scenario"


def parse_loss(value) -> float:
    text = str(value).strip()
    try:
        loss = float(text[:-1]) / 100 if text.endswith("%") else float(text)
    except ValueError:
        raise ConfigError(f"bad loss value {value!r}") from None
    if not 0.0 <= loss <= 1.0:
        raise ConfigError(f"loss {loss} outside [0, 1]")
    return loss


def loss_label(loss: float) -> str:
    return f"{loss * 100:g}pct"


@dataclass(frozen=True)
class ScenarioConfig:
    experiment: str = "bulk"
    orbit: str = "GEO"
    loss: float = 0.0001
    mode: str = "smaq-pep"
    pep_count: Optional[int] = None  # None: 0 for quic, 2 for smaq-pep
    repetitions: int = 1
    seed: int = 1
    checkpoints: Tuple[float, ...] = DEFAULT_CHECKPOINTS
    manifest: Optional[str] = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.orbit.upper() not in ORBITS:
            raise ConfigError(f"unknown orbit {self.orbit!r}")
        object.__setattr__(self, "orbit", self.orbit.upper())
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "loss", parse_loss(self.loss))
        peps = self.pep_count
        if peps is None:
            peps = 0 if self.mode == "quic" else 2
        if self.mode == "quic" and peps != 0:
            raise ConfigError("mode quic runs without middleboxes (pep_count must be 0)")
        if self.mode == "smaq-pep" and peps not in (1, 2):
            raise ConfigError("mode smaq-pep needs pep_count 1 or 2")
        object.__setattr__(self, "pep_count", peps)
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if not self.checkpoints or any(t <= 0 for t in self.checkpoints):
            raise ConfigError("checkpoints must be positive")
        object.__setattr__(self, "checkpoints", tuple(sorted(float(t) for t in self.checkpoints)))
        if self.experiment == "migration-time" and self.mode != "smaq-pep":
            raise ConfigError("migration-time needs mode smaq-pep")

    @property
    def name(self) -> str:
        parts = [self.experiment, self.orbit, loss_label(self.loss), self.mode]
        if self.mode == "smaq-pep" and self.pep_count != 2:
            parts.append(f"{self.pep_count}pep")
        return "-".join(parts)

    def with_mode(self, mode: str) -> "ScenarioConfig":
        return replace(self, mode=mode, pep_count=None)


def _int(section, key: str, default: int) -> int:
    try:
        return section.getint(key, fallback=default)
    except ValueError:
        raise ConfigError(f"{key} must be an integer") from None


def load_config(path: str) -> ScenarioConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not parser.has_section(SECTION):
        raise ConfigError(f"{path}: missing [{SECTION}] section")
    sec = parser[SECTION]
    known = {"experiment", "orbit", "loss", "mode", "pep_count", "repetitions", "seed", "checkpoints", "manifest"}
    unknown = set(sec) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key in ("experiment", "orbit", "mode", "manifest"):
        if key in sec:
            kwargs[key] = sec[key].strip()
    if "loss" in sec:
        kwargs["loss"] = parse_loss(sec["loss"])
    for key, default in (("repetitions", 1), ("seed", 1)):
        kwargs[key] = _int(sec, key, default)
    if "pep_count" in sec:
        kwargs["pep_count"] = _int(sec, "pep_count", 0)
    if "checkpoints" in sec:
        try:
            kwargs["checkpoints"] = tuple(float(x) for x in sec["checkpoints"].split(",") if x.strip())
        except ValueError:
            raise ConfigError("checkpoints must be comma-separated seconds") from None
    return ScenarioConfig(**kwargs)
