"""Dense complex-operator primitives and density-matrix validation.

Operators and states are plain ``numpy.ndarray`` values with ``complex128``
entries; the classes here are thin validated wrappers used at API
boundaries. Everything is immutable after construction (the wrapped arrays
are marked read-only), so values can be shared freely between concurrent
workers. Units follow hbar = 1 throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "HERM_TOL",
    "TRACE_TOL",
    "PSD_TOL",
    "NORM_TOL",
    "DimensionMismatchError",
    "StateValidationError",
    "as_operator",
    "state_matrix",
    "state_vector",
    "commutator",
    "expectation",
    "DensityValidationReport",
    "validate_density",
    "PureState",
    "DensityMatrix",
]

# Default invariant tolerances for density matrices.
HERM_TOL = 1e-9
TRACE_TOL = 1e-9
PSD_TOL = 1e-8
# Default norm tolerance for pure states.
NORM_TOL = 1e-12


class DimensionMismatchError(ValueError):
    """Operands act on different Hilbert-space dimensions."""


class StateValidationError(ValueError):
    """A state or operator violates its defining invariants."""


def state_matrix(rho) -> np.ndarray:
    """Unwrap a :class:`DensityMatrix` (or coerce an array) to an ndarray."""
    m = getattr(rho, "matrix", rho)
    return np.asarray(m, dtype=np.complex128)


def state_vector(psi) -> np.ndarray:
    """Unwrap a :class:`PureState` (or coerce an array) to an ndarray."""
    v = getattr(psi, "amplitudes", psi)
    return np.asarray(v, dtype=np.complex128)


def as_operator(m, name: str = "operator") -> np.ndarray:
    """Coerce ``m`` to a square, finite, C-contiguous complex128 array.

    Raises :class:`StateValidationError` for non-square or non-finite input.
    """
    arr = np.ascontiguousarray(state_matrix(m))
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise StateValidationError(
            f"{name} must be a square matrix, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise StateValidationError(f"{name} contains non-finite entries")
    return arr


def commutator(a, b) -> np.ndarray:
    """Return ``a @ b - b @ a``."""
    a = as_operator(a, "a")
    b = as_operator(b, "b")
    if a.shape != b.shape:
        raise DimensionMismatchError(
            f"commutator of {a.shape[0]}-dim and {b.shape[0]}-dim operators"
        )
    return a @ b - b @ a


def expectation(rho, psi) -> float:
    """Return ``<psi| rho |psi>`` as a real number.

    The value is real up to roundoff for Hermitian ``rho``; the real part is
    returned.
    """
    r = state_matrix(rho)
    v = state_vector(psi)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise StateValidationError("rho must be a square matrix")
    if v.ndim != 1 or v.shape[0] != r.shape[0]:
        raise DimensionMismatchError(
            f"state of dim {v.shape} against operator of dim {r.shape[0]}"
        )
    return float(np.vdot(v, r @ v).real)


@dataclass(frozen=True)
class DensityValidationReport:
    """Measured deviations of a candidate density matrix from its invariants."""

    herm_dev: float
    trace_dev: float
    min_eig: float
    herm_tol: float
    trace_tol: float
    psd_tol: float

    @property
    def herm_ok(self) -> bool:
        return self.herm_dev <= self.herm_tol

    @property
    def trace_ok(self) -> bool:
        return self.trace_dev <= self.trace_tol

    @property
    def positive_ok(self) -> bool:
        return self.min_eig >= -self.psd_tol

    @property
    def passed(self) -> bool:
        return self.herm_ok and self.trace_ok and self.positive_ok

    def failures(self) -> tuple[str, ...]:
        bad = []
        if not self.herm_ok:
            bad.append("hermiticity")
        if not self.trace_ok:
            bad.append("trace")
        if not self.positive_ok:
            bad.append("positivity")
        return tuple(bad)

    def __str__(self) -> str:
        detail = (
            f"herm_dev={self.herm_dev:.3e}, trace_dev={self.trace_dev:.3e}, "
            f"min_eig={self.min_eig:.3e}"
        )
        if self.passed:
            return f"pass ({detail})"
        return f"fail: {', '.join(self.failures())} ({detail})"


def validate_density(
    m,
    tol: float = 1.0,
    *,
    herm_tol: float | None = None,
    trace_tol: float | None = None,
    psd_tol: float | None = None,
) -> DensityValidationReport:
    """Measure Hermiticity, trace and positivity deviations of ``m``.

    ``tol`` scales the three default thresholds uniformly; the keyword
    arguments override them individually. A report is always produced,
    whether or not the checks pass. Positivity is judged from the spectrum
    of the Hermitian part ``(m + m^dagger)/2``, which is robust to roundoff.
    """
    arr = as_operator(m, "density matrix")
    ht = HERM_TOL * tol if herm_tol is None else herm_tol
    tt = TRACE_TOL * tol if trace_tol is None else trace_tol
    pt = PSD_TOL * tol if psd_tol is None else psd_tol
    herm_dev = float(np.abs(arr - arr.conj().T).max())
    trace_dev = float(abs(arr.trace() - 1.0))
    min_eig = float(np.linalg.eigvalsh(0.5 * (arr + arr.conj().T))[0])
    return DensityValidationReport(
        herm_dev=herm_dev,
        trace_dev=trace_dev,
        min_eig=min_eig,
        herm_tol=ht,
        trace_tol=tt,
        psd_tol=pt,
    )


class PureState:
    """Unit-norm state vector over the canonical basis."""

    __slots__ = ("_amps",)

    def __init__(self, amplitudes, norm_tol: float = NORM_TOL):
        amps = np.array(state_vector(amplitudes), dtype=np.complex128)
        if amps.ndim != 1 or amps.size < 1:
            raise StateValidationError("state vector must be 1-D and non-empty")
        if not np.all(np.isfinite(amps)):
            raise StateValidationError("state vector has non-finite amplitudes")
        norm = float(np.linalg.norm(amps))
        if abs(norm - 1.0) > norm_tol:
            raise StateValidationError(
                f"state vector norm {norm:.17g} deviates from 1 beyond {norm_tol:g}"
            )
        amps.flags.writeable = False
        self._amps = amps

    @classmethod
    def basis_state(cls, dim: int, index: int) -> "PureState":
        amps = np.zeros(dim, dtype=np.complex128)
        amps[index] = 1.0
        return cls(amps)

    @property
    def amplitudes(self) -> np.ndarray:
        return self._amps

    @property
    def dim(self) -> int:
        return self._amps.shape[0]

    def projector(self) -> np.ndarray:
        """Return ``|psi><psi|``."""
        return np.outer(self._amps, self._amps.conj())

    def __repr__(self) -> str:
        return f"PureState(dim={self.dim})"


class DensityMatrix:
    """Hermitian, unit-trace, positive-semidefinite state matrix."""

    __slots__ = ("_m",)

    def __init__(
        self,
        matrix,
        tol: float = 1.0,
        *,
        herm_tol: float | None = None,
        trace_tol: float | None = None,
        psd_tol: float | None = None,
    ):
        arr = np.array(as_operator(matrix, "density matrix"))
        report = validate_density(
            arr, tol, herm_tol=herm_tol, trace_tol=trace_tol, psd_tol=psd_tol
        )
        if not report.passed:
            raise StateValidationError(f"invalid density matrix: {report}")
        arr.flags.writeable = False
        self._m = arr

    @classmethod
    def from_pure(cls, psi) -> "DensityMatrix":
        """Build the projector ``|psi><psi|``."""
        v = PureState(psi) if not isinstance(psi, PureState) else psi
        return cls(v.projector())

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls(np.eye(dim, dtype=np.complex128) / dim)

    @property
    def matrix(self) -> np.ndarray:
        return self._m

    @property
    def dim(self) -> int:
        return self._m.shape[0]

    def purity(self) -> float:
        """Return ``Tr rho^2`` (1 for pure states)."""
        return float(np.einsum("ij,ji->", self._m, self._m).real)

    def __repr__(self) -> str:
        return f"DensityMatrix(dim={self.dim}, purity={self.purity():.6f})"
