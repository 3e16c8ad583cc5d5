
import numpy as np
import pytest

from dfscontrol import (
    DensityMatrix,
    DimensionMismatchError,
    FourLevelParams,
    LindbladModel,
    LyapunovController,
    StateValidationError,
        TrajectoryValidationError,
    build_model,
    dissipator,
    evolve,
    lindblad_rhs,
    rk4_step,
)

from conftest import random_density, random_hermitian


def ket(i, dim=4):
    v = np.zeros(dim, dtype=complex)
    v[i] = 1.0
    return v


def exact_unitary_map(h0, rho, t):
    evals, vecs = np.linalg.eigh(h0)
    u = vecs @ np.diag(np.exp(-1j * evals * t)) @ vecs.conj().T
    return u @ rho @ u.conj().T


class TestModel:
    def test_rejects_non_hermitian_h0(self):
        m = np.zeros((2, 2), dtype=complex)
        m[0, 1] = 1.0
        with pytest.raises(StateValidationError):
            LindbladModel(m)

    def test_rejects_negative_rate(self):
        with pytest.raises(StateValidationError):
            LindbladModel(np.eye(2, dtype=complex), jumps=[(np.eye(2), -0.1)])

    def test_rejects_mixed_dimensions(self):
        with pytest.raises(DimensionMismatchError):
            LindbladModel(np.eye(2, dtype=complex), controls=[np.eye(3, dtype=complex)])

    def test_arrays_read_only(self, ref_model):
        with pytest.raises(ValueError):
            ref_model.h0[0, 0] = 1.0


class TestDissipator:
    def test_zero_rates_give_zero(self, ref_model):
        rng = np.random.default_rng(2)
        assert np.abs(dissipator(ref_model, random_density(rng))).max() == 0.0

    def test_excited_state_decay_pattern(self):
        gammas = (0.2, 0.3, 0.5)
        model = build_model(FourLevelParams(gammas=gammas))
        out = dissipator(model, np.outer(ket(0), ket(0)))
        expected = np.diag([-sum(gammas), *gammas]).astype(complex)
        assert np.abs(out - expected).max() < 1e-15

    def test_dark_state_is_dark(self, dark_basis):
        model = build_model(FourLevelParams(gammas=(0.4, 0.4, 0.4)))
        rho = DensityMatrix.from_pure(dark_basis.vector(0))
        assert np.abs(dissipator(model, rho)).max() < 1e-15

    def test_traceless_and_hermitian(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            jumps = [
                (rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)), rng.uniform(0, 2))
                for _ in range(3)
            ]
            model = LindbladModel(np.zeros((4, 4), dtype=complex), jumps=jumps)
            out = dissipator(model, random_hermitian(rng))
            assert abs(out.trace()) <= 1e-12
            assert np.abs(out - out.conj().T).max() <= 1e-12

    def test_dimension_mismatch(self, ref_model):
        with pytest.raises(DimensionMismatchError):
            dissipator(ref_model, np.eye(3, dtype=complex) / 3)


class TestRhs:
    def test_stationary_eigenprojector(self):
        h0 = np.diag([1.0, 2.0, 3.0, 4.0]).astype(complex)
        model = LindbladModel(h0)
        rho = np.outer(ket(1), ket(1))
        assert np.abs(lindblad_rhs(model, rho, [])).max() == 0.0

    def test_decomposition_identity(self, decaying_model):
        rng = np.random.default_rng(23)
        rho = random_density(rng)
        lhs = lindblad_rhs(decaying_model, rho, [0.0, 0.0, 0.0])
        h0 = decaying_model.h0
        rhs = -1j * (h0 @ rho - rho @ h0) + dissipator(decaying_model, rho)
        assert np.abs(lhs - rhs).max() <= 1e-15

    def test_free_commutator_on_excited_state(self, ref_model, ref_params):
        rho = np.outer(ket(0), ket(0))
        out = lindblad_rhs(ref_model, rho, [0.0, 0.0, 0.0])
        expected = -1j * (ref_model.h0 @ rho - rho @ ref_model.h0)
        assert np.abs(out - expected).max() == 0.0
        # entries couple |e> to each ground state with strength Omega_j
        om = ref_params.couplings
        for j in range(1, 4):
            assert abs(out[j, 0]) == pytest.approx(om[j - 1], abs=1e-12)

    def test_linear_in_rho(self, decaying_model):
        rng = np.random.default_rng(29)
        r1, r2 = random_hermitian(rng), random_hermitian(rng)
        f = [0.3, -0.2, 0.9]
        lhs = lindblad_rhs(decaying_model, 0.4 * r1 + 0.6 * r2, f)
        rhs = 0.4 * lindblad_rhs(decaying_model, r1, f) + 0.6 * lindblad_rhs(
            decaying_model, r2, f
        )
        assert np.abs(lhs - rhs).max() <= 1e-12

    def test_field_count_mismatch(self, ref_model):
        with pytest.raises(DimensionMismatchError):
            lindblad_rhs(ref_model, np.eye(4, dtype=complex) / 4, [0.0])

    def test_traceless_hermitian_output(self, decaying_model):
        rng = np.random.default_rng(31)
        out = lindblad_rhs(decaying_model, random_density(rng), [0.1, 0.2, 0.3])
        assert abs(out.trace()) <= 1e-12
        assert np.abs(out - out.conj().T).max() <= 1e-12


class TestRk4Step:
    def test_commuting_stationary_case(self):
        h0 = np.diag([1.0, 2.0, 3.0, 4.0]).astype(complex)
        model = LindbladModel(h0)
        rho = np.diag([0.4, 0.3, 0.2, 0.1]).astype(complex)
        basis = np.array([ket(0)])
        new_rho, _ = rk4_step(model, None, (rho, basis), 0.0, 1e-3)
        assert np.abs(new_rho - rho).max() <= 1e-15

    def test_one_step_matches_exact_propagator(self, ref_model, ref_rho, dark_basis):
        dt = 1e-3
        rho0 = np.array(ref_rho.matrix)
        new_rho, _ = rk4_step(ref_model, None, (rho0, dark_basis.basis), 0.0, dt)
        exact = exact_unitary_map(ref_model.h0, rho0, dt)
        assert np.abs(new_rho - exact).max() <= 1e-12

    def test_basis_propagation_matches_exact(self, ref_model):
        dt = 1e-3
        evals, vecs = np.linalg.eigh(ref_model.h0)
        basis = np.array([vecs[:, -1]])  # largest-eigenvalue eigenvector
        rho = np.eye(4, dtype=complex) / 4
        _, new_basis = rk4_step(ref_model, None, (rho, basis), 0.0, dt)
        exact = np.exp(-1j * evals[-1] * dt) * basis
        assert np.abs(new_basis - exact).max() <= 1e-12

    def test_trace_preserved(self, decaying_model, ref_rho, dark_basis):
        rho = np.array(ref_rho.matrix)
        for _ in range(10):
            rho, _ = rk4_step(
                decaying_model,
                LyapunovController(decaying_model),
                (rho, dark_basis.basis),
                0.0,
                1e-3,
            )
        assert abs(rho.trace() - 1.0) <= 1e-12

    def test_rejects_nonpositive_dt(self, ref_model, ref_rho, dark_basis):
        with pytest.raises(ValueError):
            rk4_step(ref_model, None, (ref_rho, dark_basis), 0.0, 0.0)

    def test_controller_errors_propagate(self, ref_model, ref_rho, dark_basis):
        def broken(rho, basis, t):
            raise RuntimeError("controller exploded")

        with pytest.raises(RuntimeError, match="controller exploded"):
            rk4_step(ref_model, broken, (ref_rho, dark_basis.basis), 0.0, 1e-3)


class TestEvolve:
    def test_sample_bookkeeping(self, ref_model, ref_rho, dark_basis):
        traj = evolve(ref_model, None, ref_rho, dark_basis, t_max=10e-3, dt=1e-3, sample_every=1)
        assert len(traj) == 11
        assert np.all(np.diff(traj.t) > 0)
        assert traj.t[0] == 0.0
        assert traj.t[-1] == pytest.approx(0.01, abs=1e-15)

    def test_unitary_purity_conserved_free(self, ref_model, ref_rho, dark_basis):
        traj = evolve(ref_model, None, ref_rho, dark_basis, t_max=10.0, dt=1e-3, sample_every=100)
        purity = traj.diagnostics["purity"]
        assert np.abs(purity - purity[0]).max() <= 1e-9

    def test_unitary_purity_conserved_closed_loop(self, ref_model, ref_rho, dark_basis):
        # any controller: the loop is still Hamiltonian when all rates vanish
        ctl = LyapunovController(ref_model)
        traj = evolve(ref_model, ctl, ref_rho, dark_basis, t_max=100.0, dt=1e-3, sample_every=1000)
        purity = traj.diagnostics["purity"]
        assert np.abs(purity - purity[0]).max() <= 1e-6

    def test_fourth_order_convergence(self, ref_model, ref_rho, dark_basis):
        rho0 = np.array(ref_rho.matrix)
        exact = exact_unitary_map(ref_model.h0, rho0, 10.0)
        errors = []
        for dt in (8e-3, 4e-3, 2e-3, 1e-3):
            # validate=False: the coarse-dt runs intentionally exceed the
            # physical tolerance, the point is the truncation-error slope
            traj = evolve(
                ref_model, None, ref_rho, dark_basis,
                t_max=10.0, dt=dt, sample_every=int(round(10.0 / dt)), validate=False,
            )
            errors.append(np.abs(traj.rho[-1] - exact).max())
        for coarse, fine in zip(errors, errors[1:]):
            assert coarse / fine >= 8.0

    def test_validation_abort_reports_time(self, ref_model, ref_rho, dark_basis):
        # dt far beyond the stability limit blows the state up
        with pytest.raises(TrajectoryValidationError):
            evolve(ref_model, None, ref_rho, dark_basis, t_max=50.0, dt=1.0, sample_every=1)

    def test_rejects_foreign_controller(self, ref_model, decaying_model, ref_rho, dark_basis):
        ctl = LyapunovController(decaying_model)
        with pytest.raises(ValueError, match="different model"):
            evolve(ref_model, ctl, ref_rho, dark_basis, t_max=0.01, dt=1e-3)

    def test_physicality_along_controlled_run(self, decaying_model, ref_rho, dark_basis):
        ctl = LyapunovController(decaying_model)
        traj = evolve(decaying_model, ctl, ref_rho, dark_basis, t_max=20.0, dt=1e-3, sample_every=100)
        assert traj.diagnostics["trace_dev"].max() <= 1e-9
        assert traj.diagnostics["herm_dev"].max() <= 1e-9
        assert traj.diagnostics["min_eig"].min() >= -1e-8

    def test_trajectory_sample_accessor(self, ref_model, ref_rho, dark_basis):
        ctl = LyapunovController(ref_model)
        traj = evolve(ref_model, ctl, ref_rho, dark_basis, t_max=0.1, dt=1e-3, sample_every=10)
        s = traj.final
        assert s.t == pytest.approx(0.1, abs=1e-12)
        assert set(s.observables) == {"P_DFS", "P_D1", "P_D2"}
        assert s.n0 is None  # no dissipation, no correction index
        assert 0.0 <= s.observables["P_DFS"] <= 1.0 + 1e-9
