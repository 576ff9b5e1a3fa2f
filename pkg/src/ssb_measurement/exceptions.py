"""
Custom exceptions for the ssb-measurement simulation library
"""
from pathlib import Path
from typing import Optional


class SimulationError(Exception):
    """
    Base exception for all simulation-related errors.

    Intent:
    Provides a common base class so callers (most importantly the CLI) can
    separate failures of the simulation library from unrelated system errors
    and map each family to its exit status.
    """

    exit_code: int = 1


class ConfigurationError(SimulationError):
    """
    Raised when an experiment or runtime configuration is invalid.

    Intent:
    Startup-time failure: the requested experiment cannot run as described.
    Nothing is computed and no output file is written.

    Common scenarios:
    - Missing parameter block for the chosen experiment kind
    - Unknown keys in a config file (typos in physics parameters)
    - Ensemble sizes out of range (e.g. n = 0 for an EPR run)
    - Stochastic experiment without a master seed
    """

    exit_code = 2


class DomainError(SimulationError):
    """
    Raised when an input lies outside the domain of an operation.

    Intent:
    Distinguishes caller mistakes (a non-unit axis, a non-negative conformal
    time, a logarithm argument that is not positive) from numerical failures
    that happen while integrating.
    """

    exit_code = 2


class DimensionError(DomainError):
    """
    Raised when a density matrix has the wrong dimension for an operation.
    """


class InvalidStateError(SimulationError):
    """
    Raised when a quantum state violates the density-matrix invariants.

    Intent:
    Operations that build noise covariances or feedback terms from a state
    need a genuine density matrix. A state that is not Hermitian, not
    normalized or not positive is rejected here instead of producing
    meaningless statistics downstream.
    """

    exit_code = 2


class CovarianceError(SimulationError):
    """
    Raised when a static noise covariance is not symmetric positive semidefinite.

    Eigenvalues down to -1e-10 are tolerated and clipped; anything more
    negative cannot be the covariance of a real Gaussian vector.
    """

    exit_code = 2


class NumericalError(SimulationError):
    """
    Base class for failures detected while integrating.

    Intent:
    Groups the errors that signal an unsuitable step size or a runaway
    trajectory, as opposed to bad inputs. The CLI reports all of them with
    the numerical-divergence exit status.
    """

    exit_code = 3


class DivergenceError(NumericalError):
    """
    Raised when a trajectory becomes non-finite or leaves the confining region.

    Carries the simulation time of the blow-up and, inside ensembles, the
    index of the offending trajectory so it can be re-run in isolation.
    """

    def __init__(
        self,
        message: str,
        time: Optional[float] = None,
        trajectory_index: Optional[int] = None,
    ):
        self.message = message
        self.time = time
        self.trajectory_index = trajectory_index
        details = []
        if time is not None:
            details.append(f"t={time:.6g}")
        if trajectory_index is not None:
            details.append(f"trajectory={trajectory_index}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(f"{message}{suffix}")

    def with_trajectory(self, trajectory_index: int) -> "DivergenceError":
        """Return a copy of this error tagged with an ensemble-wide trajectory index."""
        return DivergenceError(self.message, time=self.time, trajectory_index=trajectory_index)


class StepSizeError(NumericalError):
    """
    Raised when an explicit step loses a conserved structure.

    Common scenarios:
    - Density matrix positivity lost beyond 1e-8
    - Explicit master-equation step with dt * max rate >= 0.1
    - Fokker-Planck density turning negative
    - Mode-function Wronskian drifting beyond tolerance
    """


class QualityWarningError(SimulationError):
    """
    Raised when quality warnings are escalated in strict mode.

    Intent:
    Modules never fail on quality problems such as a high undecided fraction;
    they attach warnings to their results. Strict runs turn those warnings
    into a failure with a dedicated exit status.
    """

    exit_code = 4

    def __init__(self, warnings: list[str]):
        self.warnings = list(warnings)
        super().__init__("; ".join(self.warnings) or "quality warning")


class ResultWriteError(SimulationError):
    """
    Raised when results cannot be written.

    The path that failed is kept on the exception so the message always says
    which file could not be produced.
    """

    def __init__(self, message: str, path: Path):
        self.path = path
        super().__init__(f"{message}: {path}")
