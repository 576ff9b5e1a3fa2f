"""
Experiment configs and orchestration

An experiment config is a TOML document with a top-level ``kind`` and one
section per parameter block. Unknown keys anywhere are errors. Blocks that
the chosen kind needs but the file omits take their defaults, so an empty
file with ``kind = "astro-constants"`` is a complete config.
"""
import logging
import math

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Literal, Optional

import numpy as np
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .astro import QUOTED_VALUES, astro_estimates
from .config import SimulationSettings
from .cosmology import power_spectrum, predicted_power
from .engine import EnsembleRunner
from .epr import (
    STANDARD_CHSH_ANGLES,
    EprConfig,
    chsh_configs,
    chsh_from_correlations,
    chsh_statistic,
    correlation_arcsine,
    correlation_ensemble,
    correlation_quadrature_oracle,
    field_in_xz_plane,
    ideal_correlation,
    pair_readouts,
    readout_sharpness,
)
from .exceptions import (
    ConfigurationError,
    DomainError,
    InvalidStateError,
    QualityWarningError,
    SimulationError,
)
from .measurement import (
    bias_signal,
    ensemble_readouts,
    measurement_ensemble,
    measurement_time,
    p_plus_erf,
)
from .models import ApparatusParams, InflationParams, ReheatingParams
from .quantum import (
    DensityMatrix,
    bloch_vector,
    make_product,
    make_pure_spin,
    make_singlet,
    make_triplet_zero,
    maximally_mixed,
    partial_trace,
)
from .results import ResultBundle
from .seeding import derive_seed

logger = logging.getLogger(__name__)

MAX_SEED = 2**63 - 1


class ExperimentKind(str, Enum):
    MEASURE = "measure"
    EPR = "epr"
    CHSH = "chsh"
    COSMO_SPECTRUM = "cosmo-spectrum"
    ASTRO_CONSTANTS = "astro-constants"

    @property
    def stochastic(self) -> bool:
        return self is not ExperimentKind.ASTRO_CONSTANTS


REQUIRED_BLOCKS: dict[ExperimentKind, tuple[str, ...]] = {
    ExperimentKind.MEASURE: ("apparatus", "measure"),
    ExperimentKind.EPR: ("apparatus", "epr"),
    ExperimentKind.CHSH: ("apparatus", "epr", "chsh"),
    ExperimentKind.COSMO_SPECTRUM: ("inflation", "reheating", "spectrum"),
    ExperimentKind.ASTRO_CONSTANTS: (),
}


class _Block(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)


class MeasureBlock(_Block):
    """Initial spin state and time grid of a single-apparatus run."""

    state: Literal["pure", "mixed"] = "pure"
    polar_deg: float = Field(default=60.0, description="Bloch polar angle of a pure state")
    azimuth_deg: float = 0.0
    t_end: float = Field(default=10.0, gt=0)
    dt: float = Field(default=0.01, gt=0)
    mirror: bool = False

    def initial_state(self) -> DensityMatrix:
        if self.state == "mixed":
            return maximally_mixed(2)
        return make_pure_spin(math.radians(self.polar_deg), math.radians(self.azimuth_deg))


_PAIR_STATES: dict[str, Callable[[], DensityMatrix]] = {
    "singlet": make_singlet,
    "triplet-zero": make_triplet_zero,
    "up-up": lambda: make_product(make_pure_spin(0.0, 0.0), make_pure_spin(0.0, 0.0)),
}


class EprBlock(_Block):
    """
    Shared state and detector settings of a pair run.

    Both detectors use the [apparatus] block; their fields lie in the x-z
    plane at the given angles from z, with the apparatus field strength.
    """

    state: Literal["singlet", "triplet-zero", "up-up"] = "singlet"
    angle1_deg: float = 0.0
    angle2_deg: float = 0.0
    t_end: float = Field(default=12.0, gt=0)
    dt: float = Field(default=0.01, gt=0)
    feedback: bool = True
    covariance_mode: Literal["frozen", "tracking"] = "frozen"
    enforce_field_product: bool = False

    def build(self, apparatus: ApparatusParams) -> EprConfig:
        rho = _PAIR_STATES[self.state]()
        strength = apparatus.field_strength
        try:
            # rotating the fields keeps |B1||B2|, so the product check holds for every setting
            base = EprConfig(
                apparatus1=apparatus,
                apparatus2=apparatus,
                shared_rho0=rho,
                t_end=self.t_end,
                dt=self.dt,
                feedback=self.feedback,
                covariance_mode=self.covariance_mode,
                enforce_field_product=self.enforce_field_product,
            )
        except ValidationError as e:
            raise ConfigurationError(f"Invalid EPR setup: {e}") from e
        return base.with_fields(
            field_in_xz_plane(strength, self.angle1_deg),
            field_in_xz_plane(strength, self.angle2_deg),
            label=f"B1={self.angle1_deg:g},B2={self.angle2_deg:g}",
        )


class ChshBlock(_Block):
    """
    Detector angles (B, B') in degrees.

    Settings run in the order (B1,B2), (B1',B2), (B1,B2'), (B1',B2').
    """

    detector1_angles: tuple[float, float] = STANDARD_CHSH_ANGLES[0]
    detector2_angles: tuple[float, float] = STANDARD_CHSH_ANGLES[1]


class SpectrumBlock(_Block):
    """Log-spaced wavenumber grid."""

    k_min: float = Field(default=1.0, gt=0)
    k_max: float = Field(default=100.0, gt=0)
    points: int = Field(default=5, ge=2)

    @model_validator(mode="after")
    def check_range(self) -> "SpectrumBlock":
        if self.k_max <= self.k_min:
            raise ValueError("k_max must exceed k_min")
        return self

    def grid(self) -> list[float]:
        return [float(k) for k in np.geomspace(self.k_min, self.k_max, self.points)]


class OutputBlock(_Block):
    directory: Optional[str] = None
    stem: Optional[str] = None


class ExperimentConfig(BaseModel):
    """
    Fully resolved description of one experiment.

    Intent:
    The single input of run_experiment. It is what the result bundle echoes,
    so dumping it and parsing the text back must give an equal object.

    Key design decisions:
    - Every block forbids unknown keys; a typo in a physics parameter is an error
    - Blocks the kind needs are filled with defaults when absent
    - Stochastic kinds require an explicit master_seed
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: ExperimentKind
    master_seed: Optional[int] = Field(default=None, ge=0, le=MAX_SEED)
    n: int = Field(default=2000, ge=1, description="Trials per ensemble")
    workers: Optional[int] = Field(default=None, ge=1, le=256)
    strict: bool = False

    apparatus: Optional[ApparatusParams] = None
    measure: Optional[MeasureBlock] = None
    epr: Optional[EprBlock] = None
    chsh: Optional[ChshBlock] = None
    inflation: Optional[InflationParams] = None
    reheating: Optional[ReheatingParams] = None
    spectrum: Optional[SpectrumBlock] = None
    output: OutputBlock = Field(default_factory=OutputBlock)

    @model_validator(mode="before")
    @classmethod
    def fill_default_blocks(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        try:
            kind = ExperimentKind(data.get("kind"))
        except ValueError:
            return data
        data = dict(data)
        for name in REQUIRED_BLOCKS[kind]:
            if data.get(name) is None:
                data[name] = {}
        return data

    @model_validator(mode="after")
    def check_seed(self) -> "ExperimentConfig":
        if self.kind.stochastic and self.master_seed is None:
            raise ValueError(f"Experiment kind '{self.kind.value}' needs a master_seed")
        return self

    def to_dict(self) -> dict[str, Any]:
        return self.model_dump(mode="json", exclude_none=True)


def build_config(data: dict[str, Any]) -> ExperimentConfig:
    """Validate a plain mapping, reporting problems as ConfigurationError."""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid experiment config: {e}") from e


def _apply_overrides(data: dict[str, Any], values: dict[str, Any]) -> dict[str, Any]:
    merged = dict(data)
    for key, value in values.items():
        if value is None:
            continue
        block, _, field_name = key.rpartition(".")
        if block:
            merged[block] = {**merged.get(block, {}), field_name: value}
        else:
            merged[field_name] = value
    return merged


def parse_config(text: str, **overrides: Any) -> ExperimentConfig:
    """
    Parse TOML config text.

    Overrides are applied before validation, so a file may omit values (such
    as master_seed) that the command line supplies. None means "keep the
    file value"; dotted keys address a block field, e.g. ``"output.stem"``.
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"Config is not valid TOML: {e}") from e
    return build_config(_apply_overrides(data, overrides))


def load_config(path: Path, **overrides: Any) -> ExperimentConfig:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"Cannot read config {path}: {e.strerror or e}") from e
    logger.debug(f"[CONFIG] loaded {path}")
    return parse_config(text, **overrides)


def dump_config(config: ExperimentConfig) -> str:
    return tomli_w.dumps(config.to_dict())


def with_overrides(config: ExperimentConfig, **values: Any) -> ExperimentConfig:
    return build_config(_apply_overrides(config.to_dict(), values))


def default_config(kind: ExperimentKind, **overrides: Any) -> ExperimentConfig:
    """Config with every block the kind needs at its defaults."""
    return build_config(_apply_overrides({"kind": kind.value}, overrides))


def _optional(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


def _run_measure(config: ExperimentConfig, runner: EnsembleRunner) -> ResultBundle:
    assert config.apparatus and config.measure and config.master_seed is not None
    p, block = config.apparatus, config.measure
    rho0 = block.initial_state()
    summary, result = measurement_ensemble(
        rho0, p, block.t_end, block.dt, config.n, config.master_seed, runner, block.mirror
    )

    delta = bias_signal(rho0, p)
    statistics: dict[str, Any] = summary.model_dump(exclude={"warnings"})
    statistics["bias"] = delta
    try:
        statistics["p_plus_erf"] = p_plus_erf(delta, p.readout_variance)
    except DomainError:
        statistics["p_plus_erf"] = None
    try:
        statistics["measurement_time"] = measurement_time(p, delta)
    except DomainError:
        statistics["measurement_time"] = None

    assert result.decision_times is not None
    readouts = ensemble_readouts(result)
    records: list[list[Any]] = [
        [
            index,
            int(result.seeds[index]),
            int(readouts[index]),
            float(result.final_states[index, 0]),
            _optional(float(result.decision_times[index, 0])),
        ]
        for index in range(result.n_trajectories)
    ]
    return ResultBundle(
        kind=config.kind.value,
        seed=config.master_seed,
        parameters=config.to_dict(),
        statistics=statistics,
        columns=["index", "seed", "readout", "final_phi", "decision_time"],
        records=records,
        warnings=summary.warnings,
    )


def _correlation_references(epr: EprConfig) -> dict[str, Optional[float]]:
    a1 = readout_sharpness(epr.apparatus1)
    a2 = readout_sharpness(epr.apparatus2)
    references: dict[str, Optional[float]] = {
        "ideal": ideal_correlation(math.acos(epr.cos_angle)),
        "arcsine": correlation_arcsine(a1, a2, epr.cos_angle),
    }
    try:
        references["oracle"] = correlation_quadrature_oracle(epr)
    except InvalidStateError:
        references["oracle"] = None
    return references


def _run_epr(config: ExperimentConfig, runner: EnsembleRunner) -> ResultBundle:
    assert config.apparatus and config.epr and config.master_seed is not None
    epr = config.epr.build(config.apparatus)
    estimate, result = correlation_ensemble(epr, config.n, config.master_seed, runner)

    statistics: dict[str, Any] = estimate.model_dump(exclude={"warnings", "label"})
    statistics["label"] = epr.label
    statistics["cos_angle"] = epr.cos_angle
    statistics["references"] = _correlation_references(epr)
    statistics["reduced_polarizations"] = [
        bloch_vector(partial_trace(epr.shared_rho0, keep)).tolist() for keep in (0, 1)
    ]

    signs, _ = pair_readouts(result.final_states, epr)
    records: list[list[Any]] = [
        [
            index,
            int(result.seeds[index]),
            int(signs[index, 0]),
            int(signs[index, 1]),
            float(result.final_states[index, 0]),
            float(result.final_states[index, 1]),
        ]
        for index in range(result.n_trajectories)
    ]
    return ResultBundle(
        kind=config.kind.value,
        seed=config.master_seed,
        parameters=config.to_dict(),
        statistics=statistics,
        columns=["index", "seed", "readout1", "readout2", "phi1", "phi2"],
        records=records,
        warnings=estimate.warnings,
    )


def _run_chsh(config: ExperimentConfig, runner: EnsembleRunner) -> ResultBundle:
    assert config.apparatus and config.epr and config.chsh and config.master_seed is not None
    base = config.epr.build(config.apparatus)
    configs = chsh_configs(base, config.chsh.detector1_angles, config.chsh.detector2_angles)
    outcome = chsh_statistic(configs, config.n, config.master_seed, runner)

    ideal = chsh_from_correlations([ideal_correlation(math.acos(c.cos_angle)) for c in configs])
    statistics: dict[str, Any] = {
        "statistic": outcome.statistic,
        "stderr": outcome.stderr,
        "violation": outcome.violation,
        "oracle_statistic": outcome.oracle_statistic,
        "ideal_statistic": ideal,
        # setting i was estimated with this master seed; its trial j with derive_seed(seed_i, j)
        "setting_seeds": [derive_seed(config.master_seed, i) for i in range(len(configs))],
    }
    if outcome.oracle_statistic is not None and outcome.oracle_statistic <= 2.0:
        statistics["oracle_note"] = "erf-model CHSH value does not exceed the classical bound 2"

    records: list[list[Any]] = [
        [e.label, e.correlation, e.stderr, e.n_decided, e.n_undecided] for e in outcome.estimates
    ]
    return ResultBundle(
        kind=config.kind.value,
        seed=config.master_seed,
        parameters=config.to_dict(),
        statistics=statistics,
        columns=["config_label", "C", "stderr", "n_decided", "n_undecided"],
        records=records,
        warnings=outcome.warnings,
    )


def _run_spectrum(config: ExperimentConfig, runner: EnsembleRunner) -> ResultBundle:
    assert config.inflation and config.reheating and config.spectrum
    assert config.master_seed is not None
    spectrum = power_spectrum(
        config.spectrum.grid(),
        config.reheating,
        config.inflation,
        config.n,
        config.master_seed,
        runner,
    )
    mean_power = float(np.mean(spectrum.power))
    statistics: dict[str, Any] = {
        "reference": spectrum.reference,
        "predicted_power": predicted_power(config.reheating, config.inflation),
        "mean_power": mean_power,
        "ratio_to_reference": mean_power / spectrum.reference if spectrum.reference else None,
    }
    records: list[list[Any]] = [
        [k, p, e, spectrum.reference]
        for k, p, e in zip(spectrum.k, spectrum.power, spectrum.stderr)
    ]
    return ResultBundle(
        kind=config.kind.value,
        seed=config.master_seed,
        parameters=config.to_dict(),
        statistics=statistics,
        columns=["k", "P", "stderr", "reference"],
        records=records,
        warnings=spectrum.warnings,
    )


def _run_astro(config: ExperimentConfig, _runner: EnsembleRunner) -> ResultBundle:
    estimates = astro_estimates().model_dump()
    return ResultBundle(
        kind=config.kind.value,
        seed=None,
        parameters=config.to_dict(),
        statistics=estimates,
        columns=["quantity", "value", "quoted"],
        records=[[name, value, QUOTED_VALUES[name]] for name, value in estimates.items()],
    )


_DISPATCH: dict[ExperimentKind, Callable[[ExperimentConfig, EnsembleRunner], ResultBundle]] = {
    ExperimentKind.MEASURE: _run_measure,
    ExperimentKind.EPR: _run_epr,
    ExperimentKind.CHSH: _run_chsh,
    ExperimentKind.COSMO_SPECTRUM: _run_spectrum,
    ExperimentKind.ASTRO_CONSTANTS: _run_astro,
}


def run_experiment(
    config: ExperimentConfig,
    runner: Optional[EnsembleRunner] = None,
    settings: Optional[SimulationSettings] = None,
) -> ResultBundle:
    """
    Run the experiment a config describes and collect its result bundle.

    Intent:
    Single-threaded orchestration: all parallelism lives in the ensemble
    runner handed to the module, whose results do not depend on the worker
    count. Quality warnings stay attached to the bundle unless the config is
    strict, in which case they abort the run.

    Raises:
        ConfigurationError: For invalid sizes or settings
        NumericalError: Propagated from the integrators
        QualityWarningError: If strict and the bundle carries warnings
    """
    runner = runner or EnsembleRunner(workers=config.workers, settings=settings)
    logger.info(
        f"[EXPERIMENT] {config.kind.value} n={config.n} seed={config.master_seed} "
        f"workers={runner.workers}"
    )
    try:
        bundle = _DISPATCH[config.kind](config, runner)
    except SimulationError as e:
        note = f"while running the '{config.kind.value}' experiment"
        if hasattr(e, "add_note"):
            e.add_note(note)
        else:  # Python < 3.11
            e.__notes__ = [*getattr(e, "__notes__", []), note]
        raise
    logger.debug(f"[EXPERIMENT] runner metrics: {runner.metrics.to_dict()}")

    if bundle.warnings:
        for warning in bundle.warnings:
            logger.warning(f"[EXPERIMENT] {warning}")
        if config.strict:
            raise QualityWarningError(bundle.warnings)
    logger.info(f"[EXPERIMENT] {config.kind.value} finished with {len(bundle.records)} rows")
    return bundle
