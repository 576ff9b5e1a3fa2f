"""
Interface definitions for the stochastic engine.

Intent:
The engine integrates any local drift and can carry a deterministic side
process along with the stochastic state (a density matrix fed back into the
meter drift, a memory buffer for retarded forces). These protocols are the
contract between the engine and the physics modules, so the engine never
imports a physics module and tests can plug in small stand-ins.
"""
from typing import Any, Optional, Protocol, runtime_checkable

import numpy as np


@runtime_checkable
class IDriftField(Protocol):
    """
    Deterministic part of an SDE.

    Called with a (batch, d) array of states and the current time; must
    return an array of the same shape and act row by row, so a row's result
    never depends on the other rows in the batch.
    """

    def __call__(self, state: np.ndarray, time: float) -> np.ndarray: ...


@runtime_checkable
class IAuxiliaryProcess(Protocol):
    """
    Deterministic process advanced in lock-step with the SDE state.

    Intent:
    Some models couple the noisy state to extra degrees of freedom that
    evolve without their own noise: the spin density matrix of a measured
    system, or the stored history needed by a retarded force. The engine
    owns the time loop; the process supplies an additive drift and its own
    update rule.

    All methods act on a whole batch of trajectories and must treat rows
    independently.
    """

    def initial(self, batch: int, quenched: Optional[np.ndarray]) -> Any:
        """
        Create the side state for ``batch`` trajectories.

        Args:
            batch: Number of trajectories integrated together
            quenched: Per-trajectory quenched Gaussian vectors (batch, m) or None
        """
        ...

    def drift(self, aux: Any, state: np.ndarray, time: float) -> np.ndarray:
        """Additive drift contribution, shape (batch, d)."""
        ...

    def advance(self, aux: Any, state: np.ndarray, time: float, dt: float) -> Any:
        """
        Advance the side state from ``time`` to ``time + dt`` using the SDE
        state at the start of the step. Returns the new side state.

        Raises:
            StepSizeError: If the step breaks a conserved structure
        """
        ...

    def finalize(self, aux: Any) -> Optional[np.ndarray]:
        """Per-trajectory summary of the final side state (leading batch axis) or None."""
        ...
