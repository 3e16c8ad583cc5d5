"""Lyapunov functions, feedback-field synthesis, and invariant-set residuals.

The distance function is ``V(rho_D, rho) = Tr(rho_D^2) - Tr(rho rho_D)``.
Along the closed loop its derivative splits into one term per control plus a
dissipative term; choosing

    f_n = Tr{[-i H_n, rho] rho_D}                       (regular fields)
    f_n0 = -Tr[rho_D L(rho)] / Tr{rho_D [rho, i H_n0]}  (dissipative correction)

makes dV/dt <= 0. The correction index n0 exists only to cancel the
dissipative term, so when the model has no dissipation every field takes the
regular form and no index is designated. The denominator of the correction
equals the regular field value of the same index (a cyclic-trace identity),
which the default "max-denominator" strategy exploits for robust division.

``synthesize_fields`` works from an explicit target state rho_D;
``synthesize_fields_basis`` is the equivalent law written directly in terms
of the propagated subspace basis (normalized by 1/D so the two routes agree
exactly; scaling all fields by a positive constant does not affect descent).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DimensionMismatchError, state_matrix
from .dfs import TargetSubspace
from .lindblad import LindbladModel, dissipator

__all__ = [
    "ControlConfig",
    "FieldSample",
    "lyapunov_v",
    "lyapunov_vb",
    "synthesize_fields",
    "synthesize_fields_basis",
    "propagate_target",
    "lasalle_residuals",
    "LyapunovController",
]

MAX_DENOMINATOR = "max-denominator"


@dataclass(frozen=True)
class ControlConfig:
    """Feedback-law options.

    ``n0_strategy`` is either ``"max-denominator"`` (pick the index with the
    largest correction denominator at each synthesis, ties to the smallest
    index) or a fixed 1-based control index. Fields are clamped to
    ``[-field_cap, field_cap]`` when a cap is set; a correction denominator
    below ``denominator_floor`` zeroes the correction field for that sample
    (flagged, never silent).
    """

    enabled: bool = True
    n0_strategy: str | int = MAX_DENOMINATOR
    # A floor of ~1e-2 keeps the correction ratio well-conditioned under
    # fixed-step integration; with a much smaller floor the ratio thrashes
    # near sign changes of the denominator and wrecks positivity.
    denominator_floor: float = 1e-2
    field_cap: float | None = 50.0

    def __post_init__(self):
        if isinstance(self.n0_strategy, str):
            if self.n0_strategy != MAX_DENOMINATOR:
                raise ValueError(
                    f"n0_strategy must be {MAX_DENOMINATOR!r} or a 1-based index, "
                    f"got {self.n0_strategy!r}"
                )
        elif isinstance(self.n0_strategy, int) and not isinstance(self.n0_strategy, bool):
            if self.n0_strategy < 1:
                raise ValueError("a fixed n0 index is 1-based and must be >= 1")
        else:
            raise ValueError(f"invalid n0_strategy: {self.n0_strategy!r}")
        if not (self.denominator_floor > 0):
            raise ValueError("denominator_floor must be positive")
        if self.field_cap is not None and not (self.field_cap > 0):
            raise ValueError("field_cap must be positive or None")

    @property
    def n0_fixed_index(self) -> int | None:
        """0-based fixed correction index, or None for the max strategy."""
        if isinstance(self.n0_strategy, int):
            return self.n0_strategy - 1
        return None


@dataclass(frozen=True)
class FieldSample:
    """One synthesis of the feedback fields with its bookkeeping.

    ``n0`` is the 0-based index of the dissipative-correction field (None
    when the model is dissipation-free or control is disabled);
    ``denominator`` / ``numerator`` are the terms of the correction ratio;
    ``floored`` marks a denominator below the configured floor; ``capped``
    flags each clamped field.
    """

    fields: np.ndarray
    n0: int | None
    denominator: float
    numerator: float
    floored: bool
    capped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def lyapunov_v(rho_d, rho) -> float:
    """Distance function ``V = Tr(rho_D^2) - Tr(rho rho_D)``."""
    rd = state_matrix(rho_d)
    r = state_matrix(rho)
    if rd.shape != r.shape:
        raise DimensionMismatchError(
            f"target state shape {rd.shape} against state shape {r.shape}"
        )
    trd2 = np.einsum("ij,ji->", rd, rd).real
    overlap = np.einsum("ij,ji->", r, rd).real
    return float(trd2 - overlap)


def lyapunov_vb(basis, rho) -> float:
    """Basis form ``V_b = (1/D)(1 - sum_j <psi_j| rho |psi_j>)``.

    Identical to :func:`lyapunov_v` with ``rho_D = (1/D) sum_j
    |psi_j><psi_j|``; zero exactly when the state lies inside the subspace.
    """
    sub = basis if isinstance(basis, TargetSubspace) else TargetSubspace(basis)
    probs = sub.expectations(rho)
    return float((1.0 - probs.sum()) / sub.size)


def _regular_fields(control_ops: np.ndarray, k: np.ndarray) -> np.ndarray:
    # f_n = Tr{[-i H_n, rho] rho_D} = Im Tr(H_n K), K = rho rho_D - rho_D rho.
    return np.einsum("nij,ji->n", control_ops, k).imag


def _apply_correction_and_cap(
    fields: np.ndarray, numerator: float, cfg: ControlConfig, dissipative: bool
) -> FieldSample:
    n0: int | None = None
    denominator = 0.0
    floored = False
    if dissipative:
        idx = cfg.n0_fixed_index
        if idx is None:
            idx = int(np.argmax(np.abs(fields)))
        elif idx >= fields.shape[0]:
            raise ValueError(
                f"fixed n0 index {idx + 1} exceeds the {fields.shape[0]} controls"
            )
        denominator = float(fields[idx])
        n0 = idx
        if abs(denominator) < cfg.denominator_floor:
            fields[idx] = 0.0
            floored = True
        else:
            fields[idx] = -numerator / denominator
    if cfg.field_cap is not None:
        capped = np.abs(fields) > cfg.field_cap
        np.clip(fields, -cfg.field_cap, cfg.field_cap, out=fields)
    else:
        capped = np.zeros(fields.shape[0], dtype=bool)
    fields.flags.writeable = False
    return FieldSample(
        fields=fields,
        n0=n0,
        denominator=denominator,
        numerator=float(numerator),
        floored=floored,
        capped=capped,
    )


def synthesize_fields(
    model: LindbladModel, rho, rho_d, cfg: ControlConfig | None = None
) -> FieldSample:
    """Synthesize the feedback fields from the state and target state.

    Regular fields are ``Tr{[-i H_n, rho] rho_D}``. When the model is
    dissipative, the strategy-selected index is replaced by the correction
    ``-Tr[rho_D L(rho)] / Tr{rho_D [rho, i H_n0]}`` (zeroed and flagged when
    the denominator is below the floor). Without dissipation the numerator
    vanishes identically, so no correction index is designated. Disabled
    configs yield all-zero fields.
    """
    cfg = cfg or ControlConfig()
    if model.n_controls == 0:
        raise ValueError("model has no control Hamiltonians")
    r = state_matrix(rho)
    rd = state_matrix(rho_d)
    if r.shape != (model.dim, model.dim) or rd.shape != r.shape:
        raise DimensionMismatchError(
            f"state {r.shape} / target {rd.shape} against model of dim {model.dim}"
        )
    if not cfg.enabled:
        fields = np.zeros(model.n_controls)
        fields.flags.writeable = False
        return FieldSample(
            fields=fields,
            n0=None,
            denominator=0.0,
            numerator=0.0,
            floored=False,
            capped=np.zeros(model.n_controls, dtype=bool),
        )
    k = r @ rd - rd @ r
    fields = np.ascontiguousarray(_regular_fields(model.control_ops, k))
    numerator = 0.0
    if model.is_dissipative:
        numerator = float(np.einsum("ij,ji->", rd, dissipator(model, r)).real)
    return _apply_correction_and_cap(fields, numerator, cfg, model.is_dissipative)


def synthesize_fields_basis(
    model: LindbladModel, rho, basis, cfg: ControlConfig | None = None
) -> FieldSample:
    """Basis-form field law, written on the subspace vectors directly.

    Regular fields are ``(1/D) sum_j <psi_j|[-i H_n, rho]|psi_j>`` and the
    correction ratio uses the matching per-vector sums. With ``rho_D = (1/D)
    sum_j |psi_j><psi_j|`` this reproduces :func:`synthesize_fields` exactly.
    """
    cfg = cfg or ControlConfig()
    if model.n_controls == 0:
        raise ValueError("model has no control Hamiltonians")
    sub = basis if isinstance(basis, TargetSubspace) else TargetSubspace(basis)
    r = state_matrix(rho)
    if r.shape != (model.dim, model.dim) or sub.dim != model.dim:
        raise DimensionMismatchError(
            f"state {r.shape} / subspace dim {sub.dim} against model of dim {model.dim}"
        )
    if not cfg.enabled:
        fields = np.zeros(model.n_controls)
        fields.flags.writeable = False
        return FieldSample(
            fields=fields,
            n0=None,
            denominator=0.0,
            numerator=0.0,
            floored=False,
            capped=np.zeros(model.n_controls, dtype=bool),
        )
    b = sub.basis
    d = sub.size
    fields = np.empty(model.n_controls)
    for idx in range(model.n_controls):
        h = model.control_ops[idx]
        comm = -1j * (h @ r - r @ h)
        fields[idx] = np.einsum("ja,ab,jb->", b.conj(), comm, b).real / d
    numerator = 0.0
    if model.is_dissipative:
        ldiss = dissipator(model, r)
        numerator = float(np.einsum("ja,ab,jb->", b.conj(), ldiss, b).real) / d
    return _apply_correction_and_cap(fields, numerator, cfg, model.is_dissipative)


def propagate_target(basis, h0, dt: float) -> TargetSubspace:
    """Advance the target basis one RK4 step under ``i d|psi>/dt = H0 |psi>``.

    The generator is unitary, so orthonormality is preserved up to the
    integrator's local error (well inside the subspace tolerance per step).
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    sub = basis if isinstance(basis, TargetSubspace) else TargetSubspace(basis)
    h0 = np.asarray(h0, dtype=np.complex128)
    b = sub.basis
    h0t = h0.T

    def deriv(mat):
        return -1j * (mat @ h0t)

    half = 0.5 * dt
    k1 = deriv(b)
    k2 = deriv(b + half * k1)
    k3 = deriv(b + half * k2)
    k4 = deriv(b + dt * k3)
    return TargetSubspace(b + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def lasalle_residuals(rho, rho_d, model: LindbladModel) -> np.ndarray:
    """Per-control residuals ``|Tr(H_n rho rho_D) - Tr(H_n rho_D rho)|``.

    These vanish exactly on the invariant set that the closed loop converges
    to; each residual equals the magnitude of the matching regular field.
    """
    r = state_matrix(rho)
    rd = state_matrix(rho_d)
    if r.shape != (model.dim, model.dim) or rd.shape != r.shape:
        raise DimensionMismatchError(
            f"state {r.shape} / target {rd.shape} against model of dim {model.dim}"
        )
    a = r @ rd
    b = rd @ r
    out = np.empty(model.n_controls)
    for idx in range(model.n_controls):
        h = model.control_ops[idx]
        out[idx] = abs(np.einsum("ij,ji->", h, a) - np.einsum("ij,ji->", h, b))
    return out


class LyapunovController:
    """Callable feedback law bound to one model and one configuration.

    Instances are accepted by :func:`dfscontrol.lindblad.evolve` and are
    eligible for the compiled backend. The call signature is
    ``controller(rho, basis, t) -> fields`` (the law is autonomous; ``t`` is
    ignored). ``field_sample`` exposes the full synthesis bookkeeping.
    """

    def __init__(self, model: LindbladModel, config: ControlConfig | None = None):
        if model.n_controls == 0:
            raise ValueError("model has no control Hamiltonians")
        self.model = model
        self.config = config or ControlConfig()
        idx = self.config.n0_fixed_index
        if idx is not None and idx >= model.n_controls:
            raise ValueError(
                f"fixed n0 index {idx + 1} exceeds the {model.n_controls} controls"
            )

    def field_sample(self, rho, basis) -> FieldSample:
        b = np.asarray(getattr(basis, "basis", basis), dtype=np.complex128)
        rho_d = (b.T @ b.conj()) / b.shape[0]
        return synthesize_fields(self.model, rho, rho_d, self.config)

    def __call__(self, rho, basis, t: float = 0.0) -> np.ndarray:
        return self.field_sample(rho, basis).fields

    def kernel_args(self) -> dict:
        """Parameters of the compiled fast path (see ``_kernel.evolve_loop``)."""
        idx = self.config.n0_fixed_index
        return {
            "enabled": self.config.enabled,
            "n0_fixed": -1 if idx is None else idx,
            "eps_den": self.config.denominator_floor,
            "f_max": self.config.field_cap,
        }

    def __repr__(self) -> str:
        return f"LyapunovController(dim={self.model.dim}, config={self.config})"
