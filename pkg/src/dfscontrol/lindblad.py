"""Markovian master equation and the closed-loop RK4 integrator.

The equation of motion is

    drho/dt = -i [H0 + sum_n f_n H_n, rho] + L(rho),
    L(rho)  = sum_m lam_m (J_m rho J_m^dag - 1/2 {J_m^dag J_m, rho}),

with real control fields ``f_n`` re-synthesized from the instantaneous state
at every integrator stage, and the target subspace basis co-propagated under
``H0`` alone. Integration uses classical fixed-step RK4; after each step the
state is re-Hermitized and, when the trace has drifted beyond ``renorm_tol``,
renormalized (both events are counted, never silent).

Heavy runs dispatch to the compiled core in ``dfscontrol._kernel`` when it is
built; :func:`evolve` falls back to the pure numpy loop otherwise or when a
custom controller callback is supplied.
"""

from __future__ import annotations

import logging
import math
from typing import NamedTuple

import numpy as np

from . import backend as _backend
from .core import (
    HERM_TOL,
    PSD_TOL,
    TRACE_TOL,
    DensityMatrix,
    DimensionMismatchError,
    StateValidationError,
    as_operator,
    state_matrix,
    validate_density,
)
from .dfs import TargetSubspace, gamma_operator

__all__ = [
    "LindbladModel",
    "Trajectory",
    "TrajectorySample",
    "TrajectoryValidationError",
    "dissipator",
    "lindblad_rhs",
    "rk4_step",
    "evolve",
]

logger = logging.getLogger(__name__)

MODEL_HERM_TOL = 1e-12
DEFAULT_RENORM_TOL = 1e-12
DEFAULT_DV_TOL = 1e-8


class TrajectoryValidationError(StateValidationError):
    """A state failed validation during an :func:`evolve` run."""

    def __init__(self, time: float, report=None, message: str | None = None):
        self.time = time
        self.report = report
        if message is None:
            message = f"density matrix failed validation at t = {time:.6g}: {report}"
        super().__init__(message)


def _require_hermitian(m: np.ndarray, name: str, tol: float) -> None:
    dev = float(np.abs(m - m.conj().T).max())
    if dev > tol:
        raise StateValidationError(
            f"{name} must be Hermitian (max deviation {dev:.3e} > {tol:g})"
        )


class LindbladModel:
    """Free Hamiltonian, jump channels with rates, and control Hamiltonians.

    All operators must share one dimension; ``h0`` and every control must be
    Hermitian within ``herm_tol``; rates must be nonnegative. Instances are
    immutable and safe to share between concurrent runs.
    """

    __slots__ = ("_h0", "_jump_ops", "_rates", "_control_ops")

    def __init__(self, h0, jumps=(), controls=(), herm_tol: float = MODEL_HERM_TOL):
        h0 = np.array(as_operator(h0, "h0"))
        _require_hermitian(h0, "h0", herm_tol)
        n = h0.shape[0]

        jump_ops: list[np.ndarray] = []
        rates: list[float] = []
        for i, (op, rate) in enumerate(jumps):
            op = as_operator(op, f"jump operator {i}")
            if op.shape[0] != n:
                raise DimensionMismatchError(
                    f"jump operator {i} has dim {op.shape[0]}, expected {n}"
                )
            rate = float(rate)
            if not math.isfinite(rate) or rate < 0:
                raise StateValidationError(f"rate of jump {i} must be >= 0, got {rate!r}")
            jump_ops.append(op)
            rates.append(rate)

        control_ops: list[np.ndarray] = []
        for i, op in enumerate(controls):
            op = as_operator(op, f"control Hamiltonian {i}")
            if op.shape[0] != n:
                raise DimensionMismatchError(
                    f"control Hamiltonian {i} has dim {op.shape[0]}, expected {n}"
                )
            _require_hermitian(op, f"control Hamiltonian {i}", herm_tol)
            control_ops.append(op)

        self._h0 = h0
        self._jump_ops = np.array(jump_ops, dtype=np.complex128).reshape(len(jump_ops), n, n)
        self._rates = np.array(rates, dtype=np.float64)
        self._control_ops = np.array(control_ops, dtype=np.complex128).reshape(
            len(control_ops), n, n
        )
        for arr in (self._h0, self._jump_ops, self._rates, self._control_ops):
            arr.flags.writeable = False

    @property
    def h0(self) -> np.ndarray:
        return self._h0

    @property
    def jump_ops(self) -> np.ndarray:
        """Stacked jump operators, shape ``(M, N, N)``."""
        return self._jump_ops

    @property
    def rates(self) -> np.ndarray:
        return self._rates

    @property
    def jumps(self) -> tuple[tuple[np.ndarray, float], ...]:
        return tuple((self._jump_ops[m], float(self._rates[m])) for m in range(self.n_jumps))

    @property
    def control_ops(self) -> np.ndarray:
        """Stacked control Hamiltonians, shape ``(F, N, N)``."""
        return self._control_ops

    @property
    def dim(self) -> int:
        return self._h0.shape[0]

    @property
    def n_jumps(self) -> int:
        return self._jump_ops.shape[0]

    @property
    def n_controls(self) -> int:
        return self._control_ops.shape[0]

    @property
    def is_dissipative(self) -> bool:
        return bool(np.any(self._rates > 0))

    def __repr__(self) -> str:
        return (
            f"LindbladModel(dim={self.dim}, jumps={self.n_jumps}, "
            f"controls={self.n_controls})"
        )


def dissipator(model: LindbladModel, rho) -> np.ndarray:
    """Evaluate ``L(rho) = sum_m lam_m (J rho J^dag - 1/2 {J^dag J, rho})``.

    The result is traceless and Hermitian up to roundoff.
    """
    r = state_matrix(rho)
    if r.shape != (model.dim, model.dim):
        raise DimensionMismatchError(
            f"state of shape {r.shape} against model of dim {model.dim}"
        )
    out = np.zeros_like(r)
    for jump, rate in model.jumps:
        if rate == 0.0:
            continue
        jd = jump.conj().T
        jdj = jd @ jump
        out += rate * (jump @ r @ jd - 0.5 * (jdj @ r + r @ jdj))
    return out


def lindblad_rhs(model: LindbladModel, rho, fields) -> np.ndarray:
    """Right-hand side ``-i[H0 + sum_n f_n H_n, rho] + L(rho)``."""
    f = np.asarray(fields, dtype=np.float64).ravel()
    if f.shape[0] != model.n_controls:
        raise DimensionMismatchError(
            f"expected {model.n_controls} control fields, got {f.shape[0]}"
        )
    r = state_matrix(rho)
    if r.shape != (model.dim, model.dim):
        raise DimensionMismatchError(
            f"state of shape {r.shape} against model of dim {model.dim}"
        )
    h = model.h0
    if model.n_controls and np.any(f):
        h = h + np.tensordot(f, model.control_ops, axes=1)
    return -1j * (h @ r - r @ h) + dissipator(model, rho)


def _lyapunov_from_basis(rho: np.ndarray, basis: np.ndarray) -> float:
    # V = Tr(rho_D^2) - Tr(rho rho_D) with rho_D = (1/D) sum_j |psi_j><psi_j|.
    d = basis.shape[0]
    gram = basis.conj() @ basis.T
    trd2 = float((gram.real**2 + gram.imag**2).sum()) / (d * d)
    trrd = float(np.einsum("ja,ab,jb->", basis.conj(), rho, basis).real) / d
    return trd2 - trrd


def _basis_matrix(basis0) -> np.ndarray:
    if isinstance(basis0, TargetSubspace):
        return np.array(basis0.basis)
    return np.array(TargetSubspace(basis0).basis)


class _StepInfo(NamedTuple):
    renormalized: bool
    raw_trace_dev: float
    stage1_sample: object | None  # FieldSample from a rich controller, if any


def _controller_fields(controller, n_controls: int, rho, basis, t: float) -> np.ndarray:
    if controller is None:
        return np.zeros(n_controls)
    f = np.asarray(controller(rho, basis, t), dtype=np.float64).ravel()
    if f.shape[0] != n_controls:
        raise DimensionMismatchError(
            f"controller returned {f.shape[0]} fields, expected {n_controls}"
        )
    return f


def _rk4_step_impl(
    model: LindbladModel,
    controller,
    rho: np.ndarray,
    basis: np.ndarray,
    t: float,
    dt: float,
    renorm_tol: float = DEFAULT_RENORM_TOL,
    want_stage_sample: bool = False,
):
    h0t = model.h0.T

    stage1_sample = None
    field_sample = getattr(controller, "field_sample", None)
    if want_stage_sample and field_sample is not None:
        stage1_sample = field_sample(rho, basis)
        f1 = np.asarray(stage1_sample.fields, dtype=np.float64)
    else:
        f1 = _controller_fields(controller, model.n_controls, rho, basis, t)

    def deriv(r, b, ts, fields=None):
        if fields is None:
            fields = _controller_fields(controller, model.n_controls, r, b, ts)
        return lindblad_rhs(model, r, fields), -1j * (b @ h0t)

    half = 0.5 * dt
    k1r, k1b = deriv(rho, basis, t, fields=f1)
    k2r, k2b = deriv(rho + half * k1r, basis + half * k1b, t + half)
    k3r, k3b = deriv(rho + half * k2r, basis + half * k2b, t + half)
    k4r, k4b = deriv(rho + dt * k3r, basis + dt * k3b, t + dt)

    new_rho = rho + (dt / 6.0) * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
    new_basis = basis + (dt / 6.0) * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)

    new_rho = 0.5 * (new_rho + new_rho.conj().T)
    tr = float(new_rho.trace().real)
    raw_dev = abs(tr - 1.0)
    renormalized = False
    if raw_dev > renorm_tol and math.isfinite(tr) and abs(tr) > 0.5:
        new_rho = new_rho / tr
        renormalized = True
    return new_rho, new_basis, _StepInfo(renormalized, raw_dev, stage1_sample)


def rk4_step(
    model: LindbladModel,
    controller,
    state: tuple,
    t: float,
    dt: float,
    renorm_tol: float = DEFAULT_RENORM_TOL,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance ``(rho, target basis)`` by one RK4 step of length ``dt``.

    ``controller`` is a callable ``(rho, basis, t) -> fields`` returning one
    real field per control Hamiltonian (``None`` means all fields zero); it
    is re-evaluated at every stage from that stage's state. The target basis
    vectors advance under ``-i H0`` alone. After the step the density matrix
    is re-Hermitized and trace-renormalized if the trace drifted beyond
    ``renorm_tol`` (the event is logged).
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    rho, basis = state
    rho = np.array(state_matrix(rho))
    basis = np.asarray(getattr(basis, "basis", basis), dtype=np.complex128)
    new_rho, new_basis, info = _rk4_step_impl(
        model, controller, rho, basis, t, dt, renorm_tol
    )
    if info.renormalized:
        logger.debug(
            "trace renormalized at t=%.6g (|tr-1| = %.3e)", t + dt, info.raw_trace_dev
        )
    return new_rho, new_basis


def _evolve_python(
    model: LindbladModel,
    controller,
    rho0: np.ndarray,
    basis0: np.ndarray,
    dt: float,
    n_steps: int,
    sample_every: int,
    dv_tol: float,
    renorm_tol: float,
) -> dict:
    """Pure numpy twin of ``_kernel.evolve_loop`` (same outputs, same semantics)."""
    n = model.dim
    n_controls = model.n_controls
    d = basis0.shape[0]
    n_samples = n_steps // sample_every + 1

    rho_out = np.empty((n_samples, n, n), dtype=np.complex128)
    v_out = np.empty(n_samples)
    probs_out = np.empty((n_samples, d))
    fields_out = np.zeros((n_samples, n_controls))
    n0_out = np.full(n_samples, -1, dtype=np.int32)
    floored_out = np.zeros(n_samples, dtype=np.uint8)
    capped_out = np.zeros(n_samples, dtype=np.uint8)
    purity_out = np.empty(n_samples)
    trace_dev_out = np.empty(n_samples)
    herm_dev_out = np.empty(n_samples)

    rho = rho0.copy()
    basis = basis0.copy()
    field_sample = getattr(controller, "field_sample", None)

    renorms = 0
    floored_steps = 0
    capped_steps = 0
    dv_violations = 0
    max_dv = -math.inf
    max_raw_trace_dev = 0.0

    def record(si: int, v_now: float) -> None:
        rho_out[si] = rho
        v_out[si] = v_now
        probs_out[si] = np.einsum("ja,ab,jb->j", basis.conj(), rho, basis).real
        purity_out[si] = float((rho.real**2 + rho.imag**2).sum())
        trace_dev_out[si] = abs(complex(rho.trace()) - 1.0)
        herm_dev_out[si] = float(np.abs(rho - rho.conj().T).max())
        if field_sample is not None:
            s = field_sample(rho, basis)
            fields_out[si] = s.fields
            n0_out[si] = -1 if s.n0 is None else s.n0
            floored_out[si] = 1 if s.floored else 0
            capped_out[si] = 1 if np.any(s.capped) else 0
        elif controller is not None:
            fields_out[si] = _controller_fields(
                controller, n_controls, rho, basis, si * sample_every * dt
            )

    v_prev = _lyapunov_from_basis(rho, basis)
    record(0, v_prev)
    si = 0
    aborted = False
    aborted_step = -1

    for k in range(1, n_steps + 1):
        rho, basis, info = _rk4_step_impl(
            model,
            controller,
            rho,
            basis,
            (k - 1) * dt,
            dt,
            renorm_tol,
            want_stage_sample=True,
        )
        if info.renormalized:
            renorms += 1
        if info.raw_trace_dev > max_raw_trace_dev:
            max_raw_trace_dev = info.raw_trace_dev
        s1 = info.stage1_sample
        if s1 is not None:
            if s1.floored:
                floored_steps += 1
            if np.any(s1.capped):
                capped_steps += 1
        v_now = _lyapunov_from_basis(rho, basis)
        dv = v_now - v_prev
        if dv > dv_tol:
            dv_violations += 1
        if dv > max_dv:
            max_dv = dv
        v_prev = v_now
        if not math.isfinite(v_now):
            aborted = True
            aborted_step = k
            break
        if k % sample_every == 0:
            si += 1
            record(si, v_now)

    valid = si + 1
    return {
        "rho": rho_out[:valid],
        "v": v_out[:valid],
        "probs": probs_out[:valid],
        "fields": fields_out[:valid],
        "n0": n0_out[:valid],
        "floored": floored_out[:valid],
        "capped": capped_out[:valid],
        "purity": purity_out[:valid],
        "trace_dev": trace_dev_out[:valid],
        "herm_dev": herm_dev_out[:valid],
        "psi_final": basis,
        "counters": {
            "renormalizations": renorms,
            "floored_steps": floored_steps,
            "capped_steps": capped_steps,
            "dv_violations": dv_violations,
            "max_dv": max_dv,
            "max_raw_trace_dev": max_raw_trace_dev,
        },
        "aborted": aborted,
        "aborted_step": aborted_step,
    }


def _run_kernel(
    model: LindbladModel,
    kargs: dict,
    rho0: np.ndarray,
    basis0: np.ndarray,
    dt: float,
    n_steps: int,
    sample_every: int,
    dv_tol: float,
    renorm_tol: float,
) -> dict:
    kern = _backend.kernel()
    f_max = kargs["f_max"]
    return kern.evolve_loop(
        model.h0,
        model.control_ops,
        model.jump_ops,
        model.rates,
        gamma_operator(model),
        rho0,
        basis0,
        float(dt),
        int(n_steps),
        int(sample_every),
        bool(kargs["enabled"]),
        int(kargs["n0_fixed"]),
        float(kargs["eps_den"]),
        float(np.inf if f_max is None else f_max),
        float(dv_tol),
        float(renorm_tol),
    )


class TrajectorySample(NamedTuple):
    t: float
    rho: np.ndarray
    v: float
    fields: np.ndarray
    n0: int | None
    floored: bool
    capped: bool
    observables: dict
    diagnostics: dict


class Trajectory:
    """Time-sampled closed-loop history with run-level counters.

    Array attributes are indexed by sample: ``t``, ``rho`` (stacked states),
    ``v`` (Lyapunov value), ``fields``, ``n0`` (0-based correction index, -1
    when none), ``floored``/``capped`` flags, plus named ``observables``
    (``P_DFS``, ``P_D1``, ...) and ``diagnostics`` (``trace_dev``,
    ``herm_dev``, ``purity``, ``min_eig``). ``counters`` aggregates per-run
    bookkeeping: renormalizations, floored/capped synthesis steps, Lyapunov
    descent violations and the largest positive V increment.
    """

    def __init__(
        self,
        *,
        t: np.ndarray,
        rho: np.ndarray,
        v: np.ndarray,
        fields: np.ndarray,
        n0: np.ndarray,
        floored: np.ndarray,
        capped: np.ndarray,
        observables: dict,
        diagnostics: dict,
        counters: dict,
        final_basis: np.ndarray,
        dt: float,
        sample_every: int,
        backend: str,
    ):
        self.t = t
        self.rho = rho
        self.v = v
        self.fields = fields
        self.n0 = n0
        self.floored = floored
        self.capped = capped
        self.observables = observables
        self.diagnostics = diagnostics
        self.counters = counters
        self.final_basis = final_basis
        self.dt = dt
        self.sample_every = sample_every
        self.backend = backend
        for arr in (t, rho, v, fields, n0, floored, capped, final_basis):
            arr.flags.writeable = False
        for mapping in (observables, diagnostics):
            for arr in mapping.values():
                arr.flags.writeable = False

    def __len__(self) -> int:
        return self.t.shape[0]

    def sample(self, i: int) -> TrajectorySample:
        return TrajectorySample(
            t=float(self.t[i]),
            rho=self.rho[i],
            v=float(self.v[i]),
            fields=self.fields[i],
            n0=None if self.n0[i] < 0 else int(self.n0[i]),
            floored=bool(self.floored[i]),
            capped=bool(self.capped[i]),
            observables={k: float(a[i]) for k, a in self.observables.items()},
            diagnostics={k: float(a[i]) for k, a in self.diagnostics.items()},
        )

    def samples(self):
        for i in range(len(self)):
            yield self.sample(i)

    @property
    def final(self) -> TrajectorySample:
        return self.sample(len(self) - 1)

    def __repr__(self) -> str:
        return (
            f"Trajectory(samples={len(self)}, t_end={float(self.t[-1]):.6g}, "
            f"backend={self.backend!r})"
        )


def _build_trajectory(
    raw: dict,
    dt: float,
    sample_every: int,
    backend_name: str,
    tol: float,
    validate: bool,
) -> Trajectory:
    nS = raw["rho"].shape[0]
    t = (np.arange(nS, dtype=np.int64) * sample_every) * dt

    if raw["aborted"]:
        raise TrajectoryValidationError(
            time=raw["aborted_step"] * dt,
            message=(
                f"state became non-finite at t = {raw['aborted_step'] * dt:.6g}; "
                f"last valid sample at t = {float(t[-1]):.6g}"
            ),
        )

    rho = raw["rho"]
    herm_part = 0.5 * (rho + rho.conj().transpose(0, 2, 1))
    min_eig = np.linalg.eigvalsh(herm_part)[:, 0]

    probs = raw["probs"]
    observables = {"P_DFS": probs.sum(axis=1)}
    for j in range(probs.shape[1]):
        observables[f"P_D{j + 1}"] = np.ascontiguousarray(probs[:, j])
    diagnostics = {
        "trace_dev": raw["trace_dev"],
        "herm_dev": raw["herm_dev"],
        "purity": raw["purity"],
        "min_eig": min_eig,
    }

    traj = Trajectory(
        t=t,
        rho=rho,
        v=raw["v"],
        fields=raw["fields"],
        n0=raw["n0"],
        floored=raw["floored"],
        capped=raw["capped"],
        observables=observables,
        diagnostics=diagnostics,
        counters=dict(raw["counters"]),
        final_basis=np.asarray(raw["psi_final"]),
        dt=dt,
        sample_every=sample_every,
        backend=backend_name,
    )

    if validate:
        bad = (
            (raw["herm_dev"] > HERM_TOL * tol)
            | (raw["trace_dev"] > TRACE_TOL * tol)
            | (min_eig < -PSD_TOL * tol)
        )
        if np.any(bad):
            i = int(np.argmax(bad))
            report = validate_density(rho[i], tol)
            raise TrajectoryValidationError(time=float(t[i]), report=report)
    return traj


def evolve(
    model: LindbladModel,
    controller,
    rho0,
    basis0,
    t_max: float,
    dt: float,
    sample_every: int = 1,
    *,
    dv_tol: float = DEFAULT_DV_TOL,
    renorm_tol: float = DEFAULT_RENORM_TOL,
    tol: float = 1.0,
    validate: bool = True,
    backend: str | None = None,
) -> Trajectory:
    """Integrate the closed loop from 0 to ``t_max``, sampling every
    ``sample_every`` steps (the initial state is always sample 0).

    ``controller`` may be ``None`` (all fields zero), a
    :class:`~dfscontrol.control.LyapunovController` (eligible for the
    compiled backend), or any callable ``(rho, basis, t) -> fields`` (runs on
    the python backend). ``tol`` scales the per-sample density-matrix
    validation thresholds; a violating sample aborts the run with a
    :class:`TrajectoryValidationError` carrying the offending time. On the
    compiled backend the per-sample validation is applied to the recorded
    samples once integration finishes; a non-finite state still aborts
    immediately in-kernel.
    """
    if t_max <= 0:
        raise ValueError(f"t_max must be positive, got {t_max!r}")
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    sample_every = int(sample_every)
    if sample_every < 1:
        raise ValueError(f"sample_every must be >= 1, got {sample_every!r}")
    n_steps = int(round(t_max / dt))
    if n_steps < 1:
        raise ValueError(f"t_max = {t_max!r} is shorter than one step of dt = {dt!r}")

    rho_dm = rho0 if isinstance(rho0, DensityMatrix) else DensityMatrix(rho0, tol)
    basis = _basis_matrix(basis0)
    if rho_dm.dim != model.dim or basis.shape[1] != model.dim:
        raise DimensionMismatchError(
            f"model dim {model.dim}, state dim {rho_dm.dim}, "
            f"basis ambient dim {basis.shape[1]}"
        )
    if controller is not None:
        if not callable(controller):
            raise TypeError("controller must be callable or None")
        owner = getattr(controller, "model", model)
        if owner is not model:
            raise ValueError("controller was built for a different model")

    if controller is None:
        kargs = {"enabled": False, "n0_fixed": -1, "eps_den": 1.0, "f_max": None}
    else:
        getter = getattr(controller, "kernel_args", None)
        kargs = getter() if callable(getter) else None

    name = _backend.resolve(backend)
    if name == "cython" and kargs is None:
        if backend == "cython":
            raise ValueError(
                "custom controller callbacks run on the python backend; "
                "pass backend='python' or use a LyapunovController"
            )
        name = "python"

    rho_arr = np.array(rho_dm.matrix)
    if name == "cython":
        raw = _run_kernel(
            model, kargs, rho_arr, basis, dt, n_steps, sample_every, dv_tol, renorm_tol
        )
    else:
        raw = _evolve_python(
            model, controller, rho_arr, basis, dt, n_steps, sample_every, dv_tol, renorm_tol
        )
    return _build_trajectory(raw, dt, sample_every, name, tol, validate)
