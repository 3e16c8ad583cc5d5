"""Four-level atom: one excited state coupled to three degenerate ground states.

Basis order is fixed globally as (|e>, |1>, |2>, |3>) and documented in all
file outputs. The driven Hamiltonian in the rotating frame is

    H0 = Delta |e><e| + sum_j (Omega_j |e><j| + h.c.),

with couplings parameterized on the sphere: Omega_1 = Omega sin(theta)cos(phi),
Omega_2 = Omega sin(theta)sin(phi), Omega_3 = Omega cos(theta). The excited
state decays into each ground state with rate gamma_j, i.e. jump operators
J_j = |j><e|. (The lowering-operator orientation is the one consistent with
decay *into* the ground states and with the dark states forming a DFS; the
opposite convention |e><j| pumps population upward and breaks both.)

The two degenerate dark states

    |D1> = cos(phi)|2> - sin(phi)|1>
    |D2> = cos(theta)(cos(phi)|1> + sin(phi)|2>) - sin(theta)|3>

are annihilated by H0 and by every J_j, so they span a two-dimensional DFS
for any decay rates. Controls are H_j = |e><j| + |j><e|, j = 1..3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PureState, StateValidationError
from .dfs import TargetSubspace
from .lindblad import LindbladModel

__all__ = [
    "BASIS_LABELS",
    "FourLevelParams",
    "InitialStateAngles",
    "build_model",
    "dark_states",
    "initial_state",
]

BASIS_LABELS = ("e", "1", "2", "3")
DIM = 4


@dataclass(frozen=True)
class FourLevelParams:
    """Detuning, overall coupling, coupling angles (radians) and decay rates."""

    delta: float = 3.0
    omega: float = 5.0
    theta: float = math.pi / 3
    phi: float = math.pi / 4
    gammas: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("delta", "omega", "theta", "phi"):
            if not math.isfinite(getattr(self, name)):
                raise StateValidationError(f"{name} must be finite")
        if self.omega < 0:
            raise StateValidationError(f"omega must be >= 0, got {self.omega!r}")
        gam = tuple(float(g) for g in self.gammas)
        if len(gam) != 3:
            raise StateValidationError("gammas must hold exactly three rates")
        if any(not math.isfinite(g) or g < 0 for g in gam):
            raise StateValidationError(f"decay rates must be >= 0, got {gam!r}")
        object.__setattr__(self, "gammas", gam)

    @property
    def couplings(self) -> tuple[float, float, float]:
        """(Omega_1, Omega_2, Omega_3); their squares sum to Omega^2."""
        st, ct = math.sin(self.theta), math.cos(self.theta)
        sp, cp = math.sin(self.phi), math.cos(self.phi)
        return (self.omega * st * cp, self.omega * st * sp, self.omega * ct)


@dataclass(frozen=True)
class InitialStateAngles:
    """Angles (radians) of the three-parameter initial-state family."""

    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0

    def __post_init__(self):
        for name in ("beta1", "beta2", "beta3"):
            if not math.isfinite(getattr(self, name)):
                raise StateValidationError(f"{name} must be finite")

    @classmethod
    def from_pi_units(cls, values) -> "InitialStateAngles":
        b1, b2, b3 = values
        return cls(b1 * math.pi, b2 * math.pi, b3 * math.pi)

    def in_pi_units(self) -> tuple[float, float, float]:
        return (self.beta1 / math.pi, self.beta2 / math.pi, self.beta3 / math.pi)


def build_model(p: FourLevelParams) -> LindbladModel:
    """Assemble the four-level model in the (e, 1, 2, 3) basis order."""
    omegas = p.couplings
    h0 = np.zeros((DIM, DIM), dtype=np.complex128)
    h0[0, 0] = p.delta
    for j, om in enumerate(omegas, start=1):
        h0[0, j] = om
        h0[j, 0] = om

    jumps = []
    for j, gamma in enumerate(p.gammas, start=1):
        op = np.zeros((DIM, DIM), dtype=np.complex128)
        op[j, 0] = 1.0  # |j><e|: decay from the excited state into |j>
        jumps.append((op, gamma))

    controls = []
    for j in range(1, DIM):
        op = np.zeros((DIM, DIM), dtype=np.complex128)
        op[0, j] = 1.0
        op[j, 0] = 1.0
        controls.append(op)

    return LindbladModel(h0, jumps=jumps, controls=controls)


def dark_states(theta: float, phi: float) -> TargetSubspace:
    """Return the two-dimensional dark subspace for the given coupling angles."""
    st, ct = math.sin(theta), math.cos(theta)
    sp, cp = math.sin(phi), math.cos(phi)
    d1 = np.array([0.0, -sp, cp, 0.0], dtype=np.complex128)
    d2 = np.array([0.0, ct * cp, ct * sp, -st], dtype=np.complex128)
    return TargetSubspace(np.array([d1, d2]))


def initial_state(b: InitialStateAngles) -> PureState:
    """Initial pure state of the three-angle family (unit norm by construction)."""
    s1, c1 = math.sin(b.beta1), math.cos(b.beta1)
    s2, c2 = math.sin(b.beta2), math.cos(b.beta2)
    s3, c3 = math.sin(b.beta3), math.cos(b.beta3)
    amps = np.array([s1 * c3, c1 * c2, c1 * s2, s1 * s3], dtype=np.complex128)
    return PureState(amps)
