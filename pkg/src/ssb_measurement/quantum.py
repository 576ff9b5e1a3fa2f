"""
Exact finite-dimensional spin algebra: states, observables and two-spin correlations.

Spin operators use the Pauli normalization (eigenvalues +1 and -1). Basis
index 0 is spin-up along z; two-spin states use the Kronecker ordering
spin 1 (outer) by spin 2 (inner).
"""
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .exceptions import DimensionError, DomainError

HERMITICITY_TOLERANCE = 1e-12
TRACE_TOLERANCE = 1e-12
POSITIVITY_TOLERANCE = 1e-10
AXIS_TOLERANCE = 1e-10


def _frozen(matrix: np.ndarray) -> np.ndarray:
    matrix.setflags(write=False)
    return matrix


IDENTITY2 = _frozen(np.eye(2, dtype=complex))
SIGMA_X = _frozen(np.array([[0, 1], [1, 0]], dtype=complex))
SIGMA_Y = _frozen(np.array([[0, -1j], [1j, 0]], dtype=complex))
SIGMA_Z = _frozen(np.array([[1, 0], [0, -1]], dtype=complex))
PAULI = (SIGMA_X, SIGMA_Y, SIGMA_Z)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """
    Quantum state of one spin (dim 2) or a spin pair (dim 4).

    Intent:
    Immutable container shared read-only by concurrent trajectory workers.
    Construction only checks the shape; `validate_density_matrix` reports
    Hermiticity, unit-trace and positivity violations without raising.
    """

    entries: np.ndarray

    def __post_init__(self) -> None:
        matrix = np.array(self.entries, dtype=complex)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionError(f"Density matrix must be square, got shape {matrix.shape}")
        if matrix.shape[0] not in (2, 4):
            raise DimensionError(f"Density matrix dimension must be 2 or 4, got {matrix.shape[0]}")
        object.__setattr__(self, "entries", _frozen(matrix))

    @property
    def dim(self) -> int:
        return int(self.entries.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DensityMatrix):
            return NotImplemented
        return bool(np.array_equal(self.entries, other.entries))

    __hash__ = object.__hash__

    def __repr__(self) -> str:
        return f"DensityMatrix(dim={self.dim}, entries={self.entries.tolist()!r})"


class Violation(NamedTuple):
    """One broken density-matrix invariant and how badly it is broken."""

    name: str
    magnitude: float


def _unit_axis(axis: Sequence[float]) -> np.ndarray:
    vector = np.asarray(axis, dtype=float)
    if vector.shape != (3,) or not np.all(np.isfinite(vector)):
        raise DomainError(f"Axis must be a finite 3-vector, got {axis!r}")
    norm = float(np.linalg.norm(vector))
    if abs(norm - 1.0) > AXIS_TOLERANCE:
        raise DomainError(f"Axis must have unit length, |axis| = {norm:.12g}")
    return vector


def spin_component(axis: Sequence[float]) -> np.ndarray:
    """Return S·axis for a 3-vector (not necessarily unit)."""
    a = np.asarray(axis, dtype=float)
    return a[0] * SIGMA_X + a[1] * SIGMA_Y + a[2] * SIGMA_Z


def _direction(axis: Sequence[float]) -> np.ndarray:
    vector = np.asarray(axis, dtype=float)
    norm = float(np.linalg.norm(vector))
    return np.array([0.0, 0.0, 1.0]) if norm == 0.0 else vector / norm


def field_basis(axis: Sequence[float]) -> np.ndarray:
    """
    Unitary whose columns are the up and down eigenvectors of S·n.

    ``U.conj().T @ rho @ U`` expresses a single-spin state in the field
    frame. A zero vector selects the z axis, where U is the identity.
    """
    n = _direction(axis)
    polar = float(np.arccos(np.clip(n[2], -1.0, 1.0)))
    azimuth = float(np.arctan2(n[1], n[0]))
    up = np.array([np.cos(polar / 2), np.exp(1j * azimuth) * np.sin(polar / 2)])
    down = np.array([-np.exp(-1j * azimuth) * np.sin(polar / 2), np.cos(polar / 2)])
    return _frozen(np.column_stack([up, down]))


def make_pure_spin(polar_angle: float, azimuth: float) -> DensityMatrix:
    """Rank-1 projector onto the Bloch-sphere direction (polar_angle, azimuth)."""
    if not (np.isfinite(polar_angle) and np.isfinite(azimuth)):
        raise DomainError("Bloch angles must be finite")
    psi = np.array(
        [np.cos(polar_angle / 2), np.exp(1j * azimuth) * np.sin(polar_angle / 2)], dtype=complex
    )
    return DensityMatrix(np.outer(psi, psi.conj()))


def make_singlet() -> DensityMatrix:
    """Projector onto (|up,down> - |down,up>)/sqrt(2)."""
    psi = np.array([0.0, 1.0, -1.0, 0.0], dtype=complex) / np.sqrt(2.0)
    return DensityMatrix(np.outer(psi, psi.conj()))


def make_triplet_zero() -> DensityMatrix:
    """Projector onto (|up,down> + |down,up>)/sqrt(2)."""
    psi = np.array([0.0, 1.0, 1.0, 0.0], dtype=complex) / np.sqrt(2.0)
    return DensityMatrix(np.outer(psi, psi.conj()))


def make_product(first: DensityMatrix, second: DensityMatrix) -> DensityMatrix:
    """Uncorrelated pair state first ⊗ second."""
    if first.dim != 2 or second.dim != 2:
        raise DimensionError("Product states are built from two single-spin states")
    return DensityMatrix(np.kron(first.entries, second.entries))


def maximally_mixed(dim: int) -> DensityMatrix:
    return DensityMatrix(np.eye(dim, dtype=complex) / dim)


def partial_trace(rho: DensityMatrix, keep: int) -> DensityMatrix:
    """Reduced state of spin ``keep`` (0 or 1) of a pair."""
    if rho.dim != 4:
        raise DimensionError(f"Partial trace needs a two-spin state, got dim {rho.dim}")
    tensor = rho.entries.reshape(2, 2, 2, 2)
    if keep == 0:
        return DensityMatrix(np.einsum("ikjk->ij", tensor))
    if keep == 1:
        return DensityMatrix(np.einsum("kikj->ij", tensor))
    raise DomainError(f"Spin position must be 0 or 1, got {keep}")


def spin_expectation(rho: DensityMatrix, axis: Sequence[float]) -> float:
    """Tr(rho S·axis) for a single spin and a unit axis."""
    if rho.dim != 2:
        raise DimensionError(f"spin_expectation needs a single-spin state, got dim {rho.dim}")
    n = _unit_axis(axis)
    return float(np.real(np.trace(rho.entries @ spin_component(n))))


def bloch_vector(rho: DensityMatrix) -> np.ndarray:
    """(<S1>, <S2>, <S3>) of a single spin."""
    if rho.dim != 2:
        raise DimensionError(f"bloch_vector needs a single-spin state, got dim {rho.dim}")
    return np.array([np.real(np.trace(rho.entries @ s)) for s in PAULI])


def spin_correlation_matrix(rho: DensityMatrix) -> np.ndarray:
    """3x3 matrix C[i, j] = Tr(rho S_i(1) S_j(2))."""
    if rho.dim != 4:
        raise DimensionError(f"spin_correlation_matrix needs a two-spin state, got dim {rho.dim}")
    return np.array(
        [[np.real(np.trace(rho.entries @ np.kron(si, sj))) for sj in PAULI] for si in PAULI]
    )


def two_spin_covariance(rho: DensityMatrix) -> np.ndarray:
    """
    6x6 covariance of the pair noise vector (xi1, xi2) induced by ``rho``.

    Diagonal blocks are the symmetrized single-spin products, which equal
    the 3x3 identity for spin-1/2; the off-diagonal block is the two-spin
    correlation matrix.
    """
    if rho.dim != 4:
        raise DimensionError(f"two_spin_covariance needs a two-spin state, got dim {rho.dim}")

    def self_block(position: int) -> np.ndarray:
        block = np.empty((3, 3))
        for i, si in enumerate(PAULI):
            for j, sj in enumerate(PAULI):
                sym = (si @ sj + sj @ si) / 2
                op = np.kron(sym, IDENTITY2) if position == 0 else np.kron(IDENTITY2, sym)
                block[i, j] = np.real(np.trace(rho.entries @ op))
        return block

    cross = spin_correlation_matrix(rho)
    return np.block([[self_block(0), cross], [cross.T, self_block(1)]])


def validate_density_matrix(rho: DensityMatrix) -> list[Violation]:
    """
    Diagnose the density-matrix invariants without raising.

    Returns:
        Empty list when Hermiticity (1e-12), unit trace (1e-12) and
        positivity (eigenvalues >= -1e-10) all hold, otherwise one
        Violation per broken invariant with its magnitude
    """
    matrix = rho.entries
    violations: list[Violation] = []

    asymmetry = float(np.max(np.abs(matrix - matrix.conj().T)))
    if asymmetry > HERMITICITY_TOLERANCE:
        violations.append(Violation("hermiticity", asymmetry))

    trace_error = float(abs(np.trace(matrix) - 1.0))
    if trace_error > TRACE_TOLERANCE:
        violations.append(Violation("trace", trace_error))

    min_eigenvalue = float(np.min(np.linalg.eigvalsh((matrix + matrix.conj().T) / 2)))
    if min_eigenvalue < -POSITIVITY_TOLERANCE:
        violations.append(Violation("positivity", -min_eigenvalue))

    return violations
