import math

import numpy as np
import pytest

from dtcsim import hamiltonian as ham
from dtcsim.hamiltonian import (
    UnsupportedSpinError,
    build_internal,
    build_rf,
    dipolar_variant,
    hermiticity_defect,
    read_dense_matrix,
    spin_operators,
    toggling_average,
    write_dense_matrix,
)
from dtcsim.spinsys import ConfigError, SpinSpecies, system_from_positions

PI = math.pi
P = SpinSpecies("P", 0.5, 1.08394e8)
H = SpinSpecies("H", 0.5, 2.6752218744e8)
NSP = SpinSpecies("N", 1.0, 1.9337792e7)
Z = (0, 0, 1)


def random_system(seed, n_p=4, with_h=False, with_n=False, offset=0.0):
    rng = np.random.default_rng(seed)
    species = [P] * n_p + ([H] if with_h else []) + ([NSP] if with_n else [])
    pts = []
    while len(pts) < len(species):
        cand = rng.uniform(0, 1.4, 3) * 1e-9
        if all(np.linalg.norm(cand - q) >= 2.5e-10 for q in pts):
            pts.append(cand)
    return system_from_positions(pts, species, Z, driven="P", offset=offset)


class TestSpinOperators:
    def test_single_spin_half(self):
        ops = spin_operators([0.5])
        np.testing.assert_allclose(
            ops.site_operator(0, "z").toarray(), np.diag([0.5, -0.5])
        )

    def test_single_spin_one(self):
        ops = spin_operators([1.0])
        np.testing.assert_allclose(
            ops.site_operator(0, "z").toarray(), np.diag([1.0, 0.0, -1.0])
        )
        ix = ops.site_operator(0, "x").toarray()
        assert ix[0, 1] == pytest.approx(1 / math.sqrt(2))

    def test_two_spin_trace_orthogonality(self):
        ops = spin_operators([0.5, 0.5])
        z1 = ops.site_operator(0, "z").toarray()
        z2 = ops.site_operator(1, "z").toarray()
        assert np.trace(z1 @ z2) == pytest.approx(0.0, abs=1e-15)
        assert np.trace(z1 @ z1) == pytest.approx(1.0)  # d/4 with d = 4

    @pytest.mark.parametrize("spins", [[0.5], [1.0], [0.5, 1.0], [0.5, 0.5, 0.5]])
    def test_commutators(self, spins):
        ops = spin_operators(spins)
        for i in range(len(spins)):
            ix = ops.site_operator(i, "x").toarray()
            iy = ops.site_operator(i, "y").toarray()
            iz = ops.site_operator(i, "z").toarray()
            for a, b, c in ((ix, iy, iz), (iy, iz, ix), (iz, ix, iy)):
                assert np.max(np.abs(a @ b - b @ a - 1j * c)) < 1e-12
            assert hermiticity_defect(ix) < 1e-12

    def test_spin_half_square_is_quarter_identity(self):
        ops = spin_operators([0.5, 0.5])
        for axis in "xyz":
            m = ops.site_operator(0, axis).toarray()
            np.testing.assert_allclose(m @ m, 0.25 * np.eye(4), atol=1e-14)

    def test_total_z_diagonal(self):
        ops = spin_operators([0.5, 1.0])
        diag = ops.total_z_diagonal([0, 1])
        full = ops.total_operator("z", [0, 1]).toarray()
        np.testing.assert_allclose(np.diag(full).real, diag)

    def test_unsupported_spin(self):
        with pytest.raises(UnsupportedSpinError):
            spin_operators([0.75])


class TestBuildInternal:
    def test_two_driven_spins_eigenvalues(self):
        # 4x4 hand diagonalization: aligned pair {b/2, b/2}, triplet-0 -> -b,
        # singlet -> 0
        system = system_from_positions([(0, 0, 0), (3e-10, 0, 0)], P, Z)
        b = system.couplings[0, 1]
        terms = build_internal(system, zeeman=False)
        evals = np.sort(np.linalg.eigvalsh(terms.total.toarray()) / b)
        np.testing.assert_allclose(evals, [-1.0, 0.0, 0.5, 0.5], atol=1e-12)

    def test_hetero_pair_diagonal(self):
        system = system_from_positions([(0, 0, 0), (2.5e-10, 0, 0)], [P, H], Z, driven="P")
        b = system.couplings[0, 1]
        terms = build_internal(system, zeeman=False, homonuclear=False)
        np.testing.assert_allclose(
            np.diag(terms.total.toarray()).real, [b / 2, -b / 2, -b / 2, b / 2], rtol=1e-14
        )
        # Ising only: strictly diagonal
        off = terms.total - ham.sparse.diags(terms.total.diagonal())
        assert off.nnz == 0

    def test_zeeman_only(self):
        system = system_from_positions(
            [(0, 0, 0), (0, 0, 4e-10)], P, Z, offset=2 * PI * 100.0
        )
        zero = np.zeros((2, 2))
        system = system.__class__(system.sites, system.field_axis, zero, "P", system.offset)
        terms = build_internal(system)
        ops = spin_operators(system.spins)
        expected = system.offset * ops.total_operator("z", [0, 1]).toarray()
        np.testing.assert_allclose(terms.total.toarray(), expected, atol=1e-9)

    def test_driven_z_commutes_with_internal(self):
        for seed in range(4):
            system = random_system(seed, 3, with_h=True, with_n=True, offset=2 * PI * 250)
            terms = build_internal(system)
            ops = spin_operators(system.spins)
            izt = ops.total_operator("z", system.species_indices("P")).toarray()
            h = terms.total.toarray()
            assert np.max(np.abs(h @ izt - izt @ h)) < 1e-10

    def test_hermiticity(self):
        for seed in range(4):
            system = random_system(seed, 3, with_h=True, with_n=True, offset=300.0)
            terms = build_internal(system)
            for m in [terms.total, terms.zeeman, terms.homonuclear, *terms.hetero.values()]:
                assert hermiticity_defect(m) < 1e-12

    def test_pi_rotation_symmetry(self):
        # global pi rotation about x of the driven species maps the
        # homonuclear term to itself and the offset term to its negative
        system = random_system(9, 3, offset=2 * PI * 150)
        ops = spin_operators(system.spins)
        rot = np.eye(system.dim, dtype=complex)
        for i in system.species_indices("P"):
            ix = ops.site_operator(i, "x").toarray()
            evals, vecs = np.linalg.eigh(ix)
            rot = rot @ ((vecs * np.exp(-1j * PI * evals)) @ vecs.conj().T)
        hzz = dipolar_variant(system, "z").toarray()
        np.testing.assert_allclose(rot @ hzz @ rot.conj().T, hzz, atol=1e-10)
        zee = build_internal(system, homonuclear=False).total.toarray()
        np.testing.assert_allclose(rot @ zee @ rot.conj().T, -zee, atol=1e-10)

    def test_absent_species_flag(self):
        system = system_from_positions([(0, 0, 0), (3e-10, 0, 0)], P, Z)
        with pytest.raises(ConfigError, match="absent"):
            build_internal(system, hetero=("H",))


class TestDipolarVariants:
    def test_variants_sum_to_zero(self):
        for seed in range(3):
            system = random_system(seed, 3)
            total = sum(dipolar_variant(system, ax).toarray() for ax in "xyz")
            assert np.max(np.abs(total)) < 1e-12 * max(
                1.0, float(np.max(np.abs(system.couplings)))
            )

    def test_z_variant_equals_homonuclear_term(self):
        system = random_system(5, 4)
        hzz = dipolar_variant(system, "z").toarray()
        terms = build_internal(system, zeeman=False)
        np.testing.assert_allclose(hzz, terms.total.toarray(), atol=1e-14)

    def test_axis_validation(self):
        system = random_system(1, 2)
        with pytest.raises(ConfigError):
            dipolar_variant(system, "q")


class TestTogglingAverage:
    def test_same_phase_pairs(self):
        system = random_system(2, 3)
        for phase, axis in (("x", "x"), ("y", "y")):
            avg = toggling_average(system, [phase, phase]).toarray()
            expected = -0.5 * dipolar_variant(system, axis).toarray()
            np.testing.assert_allclose(avg, expected, atol=1e-14)

    def test_xy_pair_proportional_to_plus_hzz(self):
        system = random_system(2, 3)
        avg = toggling_average(system, ["x", "y"]).toarray()
        hzz = dipolar_variant(system, "z").toarray()
        np.testing.assert_allclose(avg, 0.25 * hzz, atol=1e-14)
        # positive coefficient: project onto hzz
        coeff = np.vdot(hzz, avg).real / np.vdot(hzz, hzz).real
        assert coeff > 0

    def test_negative_phases_map_to_same_axis(self):
        system = random_system(2, 3)
        np.testing.assert_allclose(
            toggling_average(system, ["-x", "-x"]).toarray(),
            toggling_average(system, ["x", "x"]).toarray(),
        )

    def test_empty_or_bad_phases(self):
        system = random_system(2, 3)
        with pytest.raises(ConfigError):
            toggling_average(system, [])
        with pytest.raises(ConfigError):
            toggling_average(system, ["z"])


class TestRfTerm:
    def test_phase_axes(self):
        system = random_system(4, 2)
        ops = spin_operators(system.spins)
        idx = system.species_indices("P")
        w1 = 2 * PI * 68e3
        ixt = ops.total_operator("x", idx).toarray()
        iyt = ops.total_operator("y", idx).toarray()
        np.testing.assert_allclose(build_rf(system, 0.0, w1, "P").matrix.toarray(), -w1 * ixt, atol=1e-9)
        np.testing.assert_allclose(build_rf(system, PI / 2, w1, "P").matrix.toarray(), -w1 * iyt, atol=1e-9)
        np.testing.assert_allclose(build_rf(system, PI, w1, "P").matrix.toarray(), w1 * ixt, atol=1e-9)

    def test_zero_amplitude_vanishes(self):
        system = random_system(4, 2)
        assert build_rf(system, 0.3, 0.0, "P").matrix.nnz == 0

    def test_absent_species(self):
        system = random_system(4, 2)
        with pytest.raises(ConfigError):
            build_rf(system, 0.0, 1.0, "H")


def test_dense_matrix_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    m = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    path = tmp_path / "m.txt"
    write_dense_matrix(m, path)
    back = read_dense_matrix(path)
    np.testing.assert_array_equal(m, back)
