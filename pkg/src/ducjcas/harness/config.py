"""Scenario configuration: YAML text <-> validated dataclasses.

The file carries a ``schema_version`` key; unknown keys, missing required
keys and wrong types raise :class:`ConfigError` naming the key path and,
when available, the line in the file.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..channel import SCATTERER_DOI, SCATTERER_DOU, Scatterer, SceneGeometry
from ..geometry import ArrayFrame, Direction, UpaSpec, polar_from_offset
from ..pipeline import EstimatorSettings
from ..waveform import OfdmNumerology

SCHEMA_VERSION = 1
BOLTZMANN = 1.38e-23


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message}" + (f" ({', '.join(where)})" if where else ""))
        self.key = key
        self.line = line


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(w: float) -> float:
    return 10.0 * np.log10(w) + 30.0


# ---------------------------------------------------------------- sections


@dataclass
class NumerologyConfig:
    carrier_frequency_hz: float = 63e9
    subcarrier_spacing_hz: float = 480e3
    n_subcarriers: int = 64
    n_symbols: int = 32
    guard_fraction: float = 0.125

    def build(self) -> OfdmNumerology:
        return OfdmNumerology(
            self.subcarrier_spacing_hz, self.n_subcarriers, self.n_symbols, self.carrier_frequency_hz, self.guard_fraction
        )


@dataclass
class ArrayConfig:
    rows: int = 8
    cols: int = 8
    spacing_wavelengths: float = 0.5
    x_axis: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    y_axis: list = field(default_factory=lambda: [0.0, 1.0, 0.0])
    boresight: list = field(default_factory=lambda: [0.0, 0.0, 1.0])

    def build(self, wavelength: float) -> UpaSpec:
        return UpaSpec(self.rows, self.cols, self.spacing_wavelengths * wavelength, wavelength)

    def frame(self) -> ArrayFrame:
        return ArrayFrame(tuple(self.x_axis), tuple(self.y_axis), tuple(self.boresight))


@dataclass
class ArraysConfig:
    bs: ArrayConfig = field(
        default_factory=lambda: ArrayConfig(8, 8, 0.5, [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0])
    )
    user: ArrayConfig = field(default_factory=lambda: ArrayConfig(1, 1, 0.5))


@dataclass
class NodeConfig:
    position: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    velocity: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    reflect_variance: float = 1.0


@dataclass
class ScattererConfig:
    kind: str = "dou"  # dou or doi
    position: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    velocity: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    reflect_variance: float = 1.0


@dataclass
class ProbeConfig:
    """Direction of interest; ``auto`` points at the first DoI scatterer."""

    mode: str = "auto"  # auto or angles
    phi_deg: float = 0.0
    theta_deg: float = 0.0


@dataclass
class GeometryConfig:
    bs: NodeConfig = field(default_factory=lambda: NodeConfig([50.0, 4.75, 7.0]))
    user: NodeConfig = field(default_factory=lambda: NodeConfig([140.0, 0.0, 2.0]))
    scatterers: list = field(
        default_factory=lambda: [
            ScattererConfig("dou", [132.0, 4.5, 3.0], [-40 / 3.6, 0.0, 0.0]),
            ScattererConfig("doi", [120.0, 20.0, 7.0], [-40 / 3.6, 0.0, 0.0]),
        ]
    )
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    include_nlos: bool = True


@dataclass
class SweepConfig:
    start_dbm: float = 14.0
    stop_dbm: float = 26.0
    step_db: float = 2.0

    def points(self) -> list[float]:
        if self.step_db <= 0:
            raise ConfigError("sweep step must be positive", "powers.sweep.step_db")
        n = int(np.floor((self.stop_dbm - self.start_dbm) / self.step_db + 1e-9)) + 1
        if n < 1:
            raise ConfigError("sweep stop is below start", "powers.sweep")
        return [float(round(self.start_dbm + i * self.step_db, 9)) for i in range(n)]


@dataclass
class PowersConfig:
    ul_max_dbm: float = 20.0
    dl_max_dbm: float = 27.0
    sweep: SweepConfig = field(default_factory=SweepConfig)


@dataclass
class NoiseConfig:
    """Either ``variance_w`` directly or ``k F T B`` with ``B = bandwidth_hz``."""

    variance_w: float | None = 4.9177e-12
    noise_factor: float = 10.0
    temperature_k: float = 290.0
    bandwidth_hz: float = 122.88e6

    def variance(self) -> float:
        if self.variance_w is not None:
            return float(self.variance_w)
        return BOLTZMANN * self.noise_factor * self.temperature_k * self.bandwidth_hz


@dataclass
class EstimatorConfig:
    angle_grid: int = 64
    range_grid: int | None = 256
    doppler_grid: int | None = 256
    max_iter: int = 50
    eps_angle: float = 1e-10
    eps_range: float = 1e-7
    eps_doppler: float = 1e-6
    order_mode: str = "gap"
    gap_rho: float = 10.0
    angle_sources: int = 1
    dou_sources: int = 2
    doi_sources: int = 1
    per_re_nullspace: bool = False
    peak_ranking: str = "refined"

    def build(self, refine: bool = True) -> EstimatorSettings:
        return EstimatorSettings(
            refine=refine,
            angle_grid=self.angle_grid,
            range_grid=self.range_grid,
            doppler_grid=self.doppler_grid,
            max_iter=self.max_iter,
            eps_angle=self.eps_angle,
            eps_range=self.eps_range,
            eps_doppler=self.eps_doppler,
            order_mode=self.order_mode,
            gap_rho=self.gap_rho,
            angle_sources=self.angle_sources,
            dou_sources=self.dou_sources,
            doi_sources=self.doi_sources,
            per_re_nullspace=self.per_re_nullspace,
            peak_ranking=self.peak_ranking,
        )


@dataclass
class BaselineConfig:
    """On-grid separated scheme.

    The defaults equal the refined estimator's search grids, so the two
    schemes differ only in refinement and fusion.  ``null`` range or Doppler
    grids mean one point per DFT cell.
    """

    angle_grid: int = 64
    range_grid: int | None = 256
    doppler_grid: int | None = 256


@dataclass
class CampaignConfig:
    trials: int = 100
    seed: int = 20240611
    workers: int = 1
    schemes: list = field(default_factory=lambda: ["duc", "separated"])
    qam_order: int = 4
    fading: bool = True
    ber: bool = True
    oracle_debug: bool = False


@dataclass
class FullScaleConfig:
    n_subcarriers: int = 256
    n_symbols: int = 64
    trials: int = 10000


@dataclass
class ScenarioConfig:
    schema_version: int = SCHEMA_VERSION
    numerology: NumerologyConfig = field(default_factory=NumerologyConfig)
    arrays: ArraysConfig = field(default_factory=ArraysConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    powers: PowersConfig = field(default_factory=PowersConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    full_scale: FullScaleConfig = field(default_factory=FullScaleConfig)

    # -- derived objects -------------------------------------------------------

    def numerology_obj(self) -> OfdmNumerology:
        return self.numerology.build()

    def bs_array(self) -> UpaSpec:
        return self.arrays.bs.build(self.numerology_obj().wavelength)

    def user_array(self) -> UpaSpec:
        return self.arrays.user.build(self.numerology_obj().wavelength)

    def scene(self) -> SceneGeometry:
        g = self.geometry
        kinds = {"dou": SCATTERER_DOU, "doi": SCATTERER_DOI}
        scat = tuple(Scatterer(kinds[s.kind], tuple(s.position), tuple(s.velocity), s.reflect_variance) for s in g.scatterers)
        return SceneGeometry(
            tuple(g.bs.position),
            tuple(g.user.position),
            scat,
            tuple(g.bs.velocity),
            tuple(g.user.velocity),
            g.user.reflect_variance,
            self.arrays.bs.frame(),
            self.arrays.user.frame(),
        )

    def probe_direction(self) -> Direction:
        p = self.geometry.probe
        if p.mode == "angles":
            return Direction.from_degrees(p.phi_deg, p.theta_deg)
        doi = [s for s in self.geometry.scatterers if s.kind == "doi"]
        if not doi:
            raise ConfigError("probe mode 'auto' needs a DoI scatterer", "geometry.probe.mode")
        offset = np.asarray(doi[0].position, float) - np.asarray(self.geometry.bs.position, float)
        _, d = polar_from_offset(self.arrays.bs.frame().to_local(offset))
        return d

    def ptd_points(self) -> list[float]:
        return self.powers.sweep.points()

    def with_full_scale(self) -> "ScenarioConfig":
        cfg = copy.deepcopy(self)
        cfg.numerology.n_subcarriers = self.full_scale.n_subcarriers
        cfg.numerology.n_symbols = self.full_scale.n_symbols
        cfg.campaign.trials = self.full_scale.trials
        return cfg

    def validate(self) -> "ScenarioConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version} (expected {SCHEMA_VERSION})", "schema_version")
        c = self.campaign
        if c.trials < 1:
            raise ConfigError("trials must be >= 1", "campaign.trials")
        if c.workers < 1:
            raise ConfigError("workers must be >= 1", "campaign.workers")
        for s in c.schemes:
            if s not in ("duc", "separated"):
                raise ConfigError(f"unknown scheme {s!r}", "campaign.schemes")
        if c.qam_order not in (4, 16, 64):
            raise ConfigError("qam_order must be 4, 16 or 64", "campaign.qam_order")
        if self.estimator.order_mode not in ("fixed", "gap"):
            raise ConfigError("order_mode must be 'fixed' or 'gap'", "estimator.order_mode")
        if self.estimator.peak_ranking not in ("refined", "grid"):
            raise ConfigError("peak_ranking must be 'refined' or 'grid'", "estimator.peak_ranking")
        for i, s in enumerate(self.geometry.scatterers):
            if s.kind not in ("dou", "doi"):
                raise ConfigError(f"scatterer kind must be 'dou' or 'doi', got {s.kind!r}", f"geometry.scatterers[{i}].kind")
        if self.geometry.probe.mode not in ("auto", "angles"):
            raise ConfigError("probe mode must be 'auto' or 'angles'", "geometry.probe.mode")
        for p in self.ptd_points():
            if p > self.powers.dl_max_dbm + 1e-9:
                raise ConfigError(f"swept DL data power {p} dBm exceeds the DL maximum", "powers.sweep")
        try:
            self.numerology_obj()
            self.bs_array()
            self.user_array()
            self.arrays.bs.frame()
            self.arrays.user.frame()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.noise.variance() < 0:
            raise ConfigError("noise variance must be non-negative", "noise.variance_w")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- parsing


def _key_lines(node, prefix="", out=None) -> dict:
    """Map dotted key paths to 1-based line numbers from a composed YAML node."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            _key_lines(v, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            path = f"{prefix}[{i}]"
            out[path] = v.start_mark.line + 1
            _key_lines(v, path, out)
    return out


_NUMBER = (int, float)


def _numeric_string(value):
    # YAML 1.1 reads exponents without a sign (``63.0e9``) as strings
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def _coerce(value, default, path, lines):
    line = lines.get(path)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", path, line)
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path, line)
        return value
    if isinstance(default, float):
        value = _numeric_string(value)
        if isinstance(value, bool) or not isinstance(value, _NUMBER):
            raise ConfigError(f"expected a number, got {value!r}", path, line)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path, line)
        return value
    return value


_OPTIONAL_INT = {"range_grid", "doppler_grid"}
_OPTIONAL_FLOAT = {"variance_w"}
_LIST_OF = {"scatterers": ScattererConfig}


def _build(cls, data, prefix, lines):
    obj = cls()
    if data is None:
        return obj
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for section, got {type(data).__name__}", prefix or None, lines.get(prefix))
    names = {f.name for f in fields(cls)}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in names:
            raise ConfigError("unknown key", path, lines.get(path))
        default = getattr(obj, key)
        if key in _LIST_OF:
            if not isinstance(value, list):
                raise ConfigError("expected a list", path, lines.get(path))
            value = [_build(_LIST_OF[key], v, f"{path}[{i}]", lines) for i, v in enumerate(value)]
        elif is_dataclass(default):
            value = _build(type(default), value, path, lines)
        elif key in _OPTIONAL_INT:
            if value is not None and (isinstance(value, bool) or not isinstance(value, int) or value < 2):
                raise ConfigError(f"expected null or an integer >= 2, got {value!r}", path, lines.get(path))
        elif key in _OPTIONAL_FLOAT:
            value = _numeric_string(value)
            if value is not None and (isinstance(value, bool) or not isinstance(value, _NUMBER)):
                raise ConfigError(f"expected null or a number, got {value!r}", path, lines.get(path))
            value = None if value is None else float(value)
        elif isinstance(default, list):
            if not isinstance(value, list):
                raise ConfigError(f"expected a list, got {value!r}", path, lines.get(path))
            if default and isinstance(default[0], _NUMBER):
                value = [_numeric_string(v) for v in value]
                if len(value) != len(default) or not all(isinstance(v, _NUMBER) and not isinstance(v, bool) for v in value):
                    raise ConfigError(f"expected {len(default)} numbers, got {value!r}", path, lines.get(path))
                value = [float(v) for v in value]
        else:
            value = _coerce(value, default, path, lines)
        setattr(obj, key, value)
    return obj


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate YAML configuration text."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed configuration: {getattr(exc, 'problem', exc)}", line=mark.line + 1 if mark else None) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    lines = _key_lines(node) if node is not None else {}
    if "schema_version" not in data:
        raise ConfigError("missing required key", "schema_version")
    return _build(ScenarioConfig, data, "", lines).validate()


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration file {p}: {exc.strerror}") from exc
    return parse_config(text)


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def default_config() -> ScenarioConfig:
    return ScenarioConfig().validate()


def config_from_dict(data: dict[str, Any]) -> ScenarioConfig:
    return parse_config(yaml.safe_dump(data))
