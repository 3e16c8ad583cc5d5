import math

import numpy as np
import pytest

from dfscontrol import (
    FourLevelParams,
    InitialStateAngles,
    StateValidationError,
    build_model,
    dark_states,
    dissipator,
    initial_state,
    verify_dfs,
)

from conftest import random_density


class TestBuildModel:
    def test_reference_couplings(self, ref_params, ref_model):
        om1, om2, om3 = ref_params.couplings
        assert om1 == pytest.approx(3.0619, abs=1e-4)
        assert om2 == pytest.approx(3.0619, abs=1e-4)
        assert om3 == pytest.approx(2.5, abs=1e-4)
        assert ref_model.h0[0, 1] == pytest.approx(om1, abs=1e-12)
        assert ref_model.h0[0, 0] == pytest.approx(3.0, abs=1e-12)
        assert om1**2 + om2**2 + om3**2 == pytest.approx(
            ref_params.omega**2, abs=1e-12
        )

    def test_operators_hermitian(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            p = FourLevelParams(
                delta=rng.normal(),
                omega=rng.uniform(0, 10),
                theta=rng.uniform(0, math.pi),
                phi=rng.uniform(0, 2 * math.pi),
            )
            model = build_model(p)
            assert np.abs(model.h0 - model.h0.conj().T).max() == 0.0
            for h in model.control_ops:
                assert np.abs(h - h.conj().T).max() == 0.0

    def test_jump_orientation_lowers_into_ground(self):
        model = build_model(FourLevelParams(gammas=(1.0, 1.0, 1.0)))
        for j, (op, _rate) in enumerate(model.jumps, start=1):
            e = np.zeros(4, dtype=complex)
            e[0] = 1.0
            out = op @ e
            assert out[j] == 1.0 and np.abs(np.delete(out, j)).max() == 0.0

    def test_zero_gamma_kills_dissipator(self, ref_model):
        rng = np.random.default_rng(5)
        assert not ref_model.is_dissipative
        assert np.abs(dissipator(ref_model, random_density(rng))).max() == 0.0

    def test_invalid_params_rejected(self):
        with pytest.raises(StateValidationError):
            FourLevelParams(omega=-1.0)
        with pytest.raises(StateValidationError):
            FourLevelParams(gammas=(0.1, -0.2, 0.0))
        with pytest.raises(StateValidationError):
            FourLevelParams(gammas=(0.1, 0.2))
        with pytest.raises(StateValidationError):
            FourLevelParams(delta=math.inf)


class TestDarkStates:
    def test_reference_vectors(self, dark_basis):
        d1, d2 = dark_basis.basis
        assert np.abs(d1 - np.array([0, -0.70711, 0.70711, 0])).max() < 1e-5
        assert np.abs(d2 - np.array([0, 0.35355, 0.35355, -0.86603])).max() < 1e-5

    def test_orthogonal_for_any_angles(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            sub = dark_states(rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi))
            gram = sub.basis.conj() @ sub.basis.T
            assert np.abs(gram - np.eye(2)).max() <= 1e-12

    def test_annihilated_by_h0(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            theta, phi = rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi)
            model = build_model(FourLevelParams(theta=theta, phi=phi))
            sub = dark_states(theta, phi)
            assert np.abs(model.h0 @ sub.basis.T).max() <= 1e-12

    def test_h0_zero_eigenvalue_is_doubly_degenerate(self, ref_model):
        evals = np.linalg.eigvalsh(ref_model.h0)
        assert (np.abs(evals) < 1e-10).sum() >= 2

    def test_form_a_dfs_for_any_decay(self, ref_params):
        model = build_model(
            FourLevelParams(
                theta=ref_params.theta, phi=ref_params.phi, gammas=(0.7, 0.1, 0.05)
            )
        )
        report = verify_dfs(dark_states(ref_params.theta, ref_params.phi), model)
        assert report.passed and report.max_residual <= 1e-12


class TestInitialState:
    def test_reference_amplitudes(self, ref_state):
        expected = np.array([0.47553, 0.36729, 0.72085, 0.34549])
        assert np.abs(ref_state.amplitudes - expected).max() < 1e-4

    def test_axis_cases(self):
        s = initial_state(InitialStateAngles(0.0, 0.0, 1.234))
        assert np.abs(s.amplitudes - np.array([0, 1, 0, 0])).max() < 1e-12
        s = initial_state(InitialStateAngles(math.pi / 2, 0.321, math.pi / 2))
        assert np.abs(s.amplitudes - np.array([0, 0, 0, 1])).max() < 1e-12

    def test_unit_norm_for_random_angles(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            b = InitialStateAngles(*rng.uniform(-2 * math.pi, 2 * math.pi, size=3))
            amps = initial_state(b).amplitudes
            assert abs(np.linalg.norm(amps) - 1.0) <= 1e-12

    def test_pi_units_roundtrip(self):
        b = InitialStateAngles.from_pi_units((0.2, 0.35, 0.2))
        assert b.beta1 == pytest.approx(0.2 * math.pi, abs=1e-15)
        assert b.in_pi_units() == pytest.approx((0.2, 0.35, 0.2), abs=1e-15)
