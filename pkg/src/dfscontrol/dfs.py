"""Decoherence-free-subspace checks and membership probabilities.

A subspace spanned by orthonormal vectors {psi_j} is decoherence-free for a
model ``(H0, {(J_m, lam_m)})`` exactly when three conditions hold:

1. the span is invariant under the free Hamiltonian ``H0``;
2. every jump operator acts on the span as a scalar, ``J_m psi_j = c_m psi_j``;
3. ``Gamma = sum_m lam_m J_m^dag J_m`` acts as the scalar
   ``g = sum_m lam_m |c_m|^2``.

:func:`verify_dfs` measures the residual of each condition for a candidate
basis and model. Only subspaces on which the dissipator vanishes are in
scope; DFS families defined through nontrivial dissipative dynamics are not
handled here.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import (
    DimensionMismatchError,
    PureState,
    StateValidationError,
    state_matrix,
    state_vector,
)

__all__ = [
    "TargetSubspace",
    "DfsReport",
    "gamma_operator",
    "verify_dfs",
    "subspace_probability",
]

logger = logging.getLogger(__name__)

ORTHO_TOL = 1e-10


class TargetSubspace:
    """Orthonormal basis of the target (decoherence-free) subspace.

    ``basis`` may be a ``(D, N)`` array of row vectors, a sequence of
    :class:`~dfscontrol.core.PureState` / 1-D arrays, or another
    ``TargetSubspace``. Pairwise orthonormality is enforced on construction.
    """

    __slots__ = ("_basis",)

    def __init__(self, basis, ortho_tol: float = ORTHO_TOL):
        if isinstance(basis, TargetSubspace):
            mat = np.array(basis.basis)
        elif isinstance(basis, np.ndarray) and basis.ndim == 2:
            mat = np.array(basis, dtype=np.complex128)
        else:
            rows = [state_vector(v) for v in basis]
            mat = np.array(rows, dtype=np.complex128)
        if mat.ndim != 2 or mat.shape[0] < 1:
            raise StateValidationError("subspace basis must be a (D, N) stack of vectors")
        d, n = mat.shape
        if d > n:
            raise StateValidationError(
                f"{d} basis vectors cannot be independent in dimension {n}"
            )
        if not np.all(np.isfinite(mat)):
            raise StateValidationError("subspace basis has non-finite entries")
        gram = mat.conj() @ mat.T
        dev = float(np.abs(gram - np.eye(d)).max())
        if dev > ortho_tol:
            raise StateValidationError(
                f"subspace basis is not orthonormal (max deviation {dev:.3e} > {ortho_tol:g})"
            )
        mat = np.ascontiguousarray(mat)
        mat.flags.writeable = False
        self._basis = mat

    @property
    def basis(self) -> np.ndarray:
        """Row-stacked basis vectors, shape ``(D, N)``."""
        return self._basis

    @property
    def size(self) -> int:
        """Number of basis vectors D."""
        return self._basis.shape[0]

    @property
    def dim(self) -> int:
        """Ambient Hilbert-space dimension N."""
        return self._basis.shape[1]

    def vector(self, j: int) -> PureState:
        return PureState(self._basis[j])

    def projector(self) -> np.ndarray:
        """Return ``sum_j |psi_j><psi_j|``."""
        b = self._basis
        return b.T @ b.conj()

    def target_state(self) -> np.ndarray:
        """Return the induced target state ``rho_D = P / D``."""
        return self.projector() / self.size

    def expectations(self, rho) -> np.ndarray:
        """Return the D per-vector probabilities ``<psi_j| rho |psi_j>``."""
        r = state_matrix(rho)
        b = self._basis
        if r.shape[0] != b.shape[1]:
            raise DimensionMismatchError(
                f"state of dim {r.shape[0]} against subspace in dim {b.shape[1]}"
            )
        return np.einsum("ja,ab,jb->j", b.conj(), r, b).real

    def __repr__(self) -> str:
        return f"TargetSubspace(D={self.size}, N={self.dim})"


@dataclass(frozen=True)
class DfsReport:
    """Residuals of the three DFS conditions for one basis/model pair."""

    h0_residual: float
    jump_eigenvalues: tuple[complex, ...]
    jump_residuals: tuple[float, ...]
    gamma_eigenvalue: float
    gamma_residual: float
    tol: float

    @property
    def max_residual(self) -> float:
        return max((self.h0_residual, self.gamma_residual) + self.jump_residuals)

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tol": self.tol,
            "h0_residual": self.h0_residual,
            "jump_eigenvalues": [[c.real, c.imag] for c in self.jump_eigenvalues],
            "jump_residuals": list(self.jump_residuals),
            "gamma_eigenvalue": self.gamma_eigenvalue,
            "gamma_residual": self.gamma_residual,
            "max_residual": self.max_residual,
        }

    def __str__(self) -> str:
        lines = [
            f"DFS check: {'PASS' if self.passed else 'FAIL'} (tol {self.tol:g})",
            f"  (1) H0 invariance residual: {self.h0_residual:.3e}",
        ]
        for m, (c, r) in enumerate(zip(self.jump_eigenvalues, self.jump_residuals), 1):
            lines.append(
                f"  (2) jump {m}: eigenvalue c = {c.real:+.6g}{c.imag:+.6g}j, "
                f"residual {r:.3e}"
            )
        lines.append(
            f"  (3) Gamma eigenvalue g = {self.gamma_eigenvalue:.6g}, "
            f"residual {self.gamma_residual:.3e}"
        )
        return "\n".join(lines)


def gamma_operator(model) -> np.ndarray:
    """Return ``Gamma = sum_m lam_m J_m^dag J_m`` for the model."""
    out = np.zeros((model.dim, model.dim), dtype=np.complex128)
    for jump, rate in model.jumps:
        out += rate * (jump.conj().T @ jump)
    return out


def verify_dfs(basis, model, tol: float = ORTHO_TOL) -> DfsReport:
    """Measure the three DFS conditions of ``basis`` against ``model``.

    The per-jump scalar ``c_m`` is estimated from the first basis vector and
    residual-checked against all of them; a non-orthonormal basis is
    rejected. The report passes iff every residual is at most ``tol``.
    """
    sub = basis if isinstance(basis, TargetSubspace) else TargetSubspace(basis)
    if sub.dim != model.dim:
        raise DimensionMismatchError(
            f"subspace in dim {sub.dim} against model of dim {model.dim}"
        )
    b = sub.basis  # (D, N) rows
    cols = b.T  # (N, D) columns psi_j
    proj = sub.projector()
    eye = np.eye(model.dim)

    # (1) span invariance under H0: component of H0 psi_j outside the span.
    outside = (eye - proj) @ (model.h0 @ cols)
    h0_residual = float(np.linalg.norm(outside, axis=0).max()) if sub.size else 0.0

    # (2) joint scalar action of every jump operator.
    eigenvalues: list[complex] = []
    residuals: list[float] = []
    for jump, _rate in model.jumps:
        jcols = jump @ cols
        c = complex(np.vdot(cols[:, 0], jcols[:, 0]))
        vec_res = float(np.linalg.norm(jcols - c * cols, axis=0).max())
        diag = np.einsum("aj,aj->j", cols.conj(), jcols)
        consistency = float(np.abs(diag - c).max())
        eigenvalues.append(c)
        residuals.append(max(vec_res, consistency))

    # (3) Gamma acts as g = sum_m lam_m |c_m|^2.
    g = float(sum(rate * abs(c) ** 2 for (_j, rate), c in zip(model.jumps, eigenvalues)))
    gcols = gamma_operator(model) @ cols
    gamma_residual = float(np.linalg.norm(gcols - g * cols, axis=0).max())

    return DfsReport(
        h0_residual=h0_residual,
        jump_eigenvalues=tuple(eigenvalues),
        jump_residuals=tuple(residuals),
        gamma_eigenvalue=g,
        gamma_residual=gamma_residual,
        tol=tol,
    )


def subspace_probability(rho, basis) -> float:
    """Return ``sum_j <psi_j| rho |psi_j>``, clamped to [0, 1].

    The raw (unclamped) value is logged at debug level whenever clamping
    changes it; for valid density matrices the two differ only by roundoff.
    """
    sub = basis if isinstance(basis, TargetSubspace) else TargetSubspace(basis)
    raw = float(sub.expectations(rho).sum())
    clamped = min(max(raw, 0.0), 1.0)
    if clamped != raw:
        logger.debug("subspace probability %.17g clamped to %.17g", raw, clamped)
    return clamped
