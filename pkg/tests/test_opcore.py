import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from davies_lab import opcore
from davies_lab.errors import DomainError, SingularityError
from oracles import kron_all, naive_partial_trace, relative_entropy_eig

seeds = st.integers(0, 2**31 - 1)


def rand_state(dim, seed, mix=0.1):
    return opcore.random_density(dim, np.random.default_rng(seed), mix)


def rand_herm(dim, rng):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (a + a.conj().T) / 2


class TestPartialTrace:
    def test_bell_state(self):
        psi = np.array([1, 0, 0, 1]) / math.sqrt(2)
        rho = np.outer(psi, psi.conj())
        assert np.allclose(opcore.partial_trace(rho, 2, 2, [0]), np.eye(2) / 2, atol=1e-15)

    def test_product(self):
        a, b = rand_state(2, 1), rand_state(4, 2)
        assert np.allclose(opcore.partial_trace(np.kron(a, b), 2, 3, [0]), a, atol=1e-14)
        assert np.allclose(opcore.partial_trace(np.kron(a, b), 2, 3, [1, 2]), b, atol=1e-14)

    def test_nothing_traced(self):
        x = rand_state(8, 3)
        assert np.array_equal(opcore.trace_out(x, 2, 3, []), x)

    @settings(max_examples=25, deadline=None)
    @given(seeds, st.sampled_from([(2, 3), (3, 2), (2, 4)]), st.data())
    def test_against_loop_oracle(self, seed, dn, data):
        d, n = dn
        keep = sorted(data.draw(st.sets(st.integers(0, n - 1), min_size=1, max_size=n)))
        x = rand_herm(d**n, np.random.default_rng(seed))
        assert np.allclose(opcore.partial_trace(x, d, n, keep), naive_partial_trace(x, d, n, keep),
                           atol=1e-12)

    def test_bad_position(self):
        with pytest.raises(DomainError):
            opcore.partial_trace(np.eye(4), 2, 2, [2])

    def test_normalized_variant(self):
        a, b = rand_state(2, 4), rand_state(2, 5)
        out = opcore.normalized_partial_trace(np.kron(a, b), 2, 2, [1])
        assert np.allclose(out, np.kron(a, np.eye(2) / 2), atol=1e-14)

    @settings(max_examples=20, deadline=None)
    @given(seeds)
    def test_trace_and_positivity_preserved(self, seed):
        rho = rand_state(16, seed)
        red = opcore.partial_trace(rho, 2, 4, [1, 3])
        assert abs(np.trace(red) - 1) < 1e-12
        assert np.linalg.eigvalsh(red)[0] > -1e-12


class TestEmbedding:
    def test_embed_matches_kron_permutation(self):
        rng = np.random.default_rng(0)
        a, b, c = (rand_herm(2, rng) for _ in range(3))
        full = kron_all([a, b, c])
        ac = np.kron(a, c)
        out = opcore.embed(ac, 2, 3, [0, 2]) @ opcore.embed(b, 2, 3, [1])
        assert np.allclose(out, full, atol=1e-12)

    def test_permute_sites(self):
        rng = np.random.default_rng(1)
        a, b, c = (rand_herm(2, rng) for _ in range(3))
        out = opcore.permute_sites(kron_all([a, b, c]), 2, [2, 0, 1])
        assert np.allclose(out, kron_all([c, a, b]), atol=1e-12)

    def test_local_superop_and_lift_agree(self):
        rng = np.random.default_rng(2)
        u = np.linalg.qr(rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)))[0]
        m = opcore.sprepost(u, u.conj().T)
        x = rand_herm(8, rng)
        direct = opcore.apply_local_superop(m, x, 2, 3, [1])
        big = opcore.embed(u, 2, 3, [1])
        assert np.allclose(direct, big @ x @ big.conj().T, atol=1e-12)
        lifted = opcore.lift_superop(m, 2, 3, [1])
        assert np.allclose((lifted @ x.reshape(-1)).reshape(8, 8), direct, atol=1e-12)


class TestFunctionalCalculus:
    def test_examples(self):
        assert np.allclose(opcore.logm(np.eye(3)), 0)
        assert np.allclose(opcore.expm(np.zeros((3, 3))), np.eye(3))
        assert np.allclose(opcore.logm(np.eye(2) / 2), -math.log(2) * np.eye(2))

    def test_log_of_singular_reports_eigenvalue(self):
        with pytest.raises(SingularityError) as info:
            opcore.logm(np.diag([1.0, 0.0]))
        assert info.value.args and "min eigenvalue" in str(info.value)

    @settings(max_examples=10, deadline=None)
    @given(seeds, st.sampled_from([2, 16, 128, 1024]))
    def test_round_trip(self, seed, dim):
        rho = rand_state(dim, seed, mix=0.5)
        assert np.max(np.abs(opcore.expm(opcore.logm(rho)) - rho)) < 1e-10

    def test_gibbs_with_large_beta_does_not_overflow(self):
        h = np.diag([0.0, 1.0, 2.0]).astype(complex)
        g = opcore.gibbs_from_hamiltonian(h, 1e4)
        assert np.all(np.isfinite(g)) and abs(g[0, 0] - 1) < 1e-12


class TestEntropies:
    def test_examples(self):
        rho = rand_state(4, 7)
        assert abs(opcore.relative_entropy(rho, rho)) < 1e-9
        pure = np.diag([1.0, 0.0]).astype(complex)
        assert abs(opcore.relative_entropy(pure, np.eye(2) / 2) - math.log(2)) < 1e-12

    def test_support_violation_is_infinite(self):
        assert opcore.relative_entropy(np.eye(2) / 2, np.diag([1.0, 0.0])) == float("inf")

    def test_pinsker_on_500_qubit_pairs(self):
        rng = np.random.default_rng(11)
        for _ in range(500):
            rho = opcore.random_density(2, rng, mix=rng.uniform(0.01, 0.9))
            sigma = opcore.random_density(2, rng, mix=rng.uniform(0.01, 0.9))
            lhs = opcore.trace_norm(rho - sigma)
            assert lhs <= math.sqrt(2 * opcore.relative_entropy(rho, sigma)) + 1e-12

    @settings(max_examples=25, deadline=None)
    @given(seeds, seeds)
    def test_against_eigen_oracle(self, s1, s2):
        rho, sigma = rand_state(8, s1, 0.2), rand_state(8, s2, 0.3)
        assert abs(opcore.relative_entropy(rho, sigma) - relative_entropy_eig(rho, sigma)) < 1e-9

    @settings(max_examples=25, deadline=None)
    @given(seeds, seeds, st.sets(st.integers(0, 2), min_size=1, max_size=2))
    def test_monotone_under_partial_trace(self, s1, s2, keep):
        rho, sigma = rand_state(8, s1), rand_state(8, s2, 0.3)
        keep = sorted(keep)
        full = opcore.relative_entropy(rho, sigma)
        part = opcore.relative_entropy(opcore.partial_trace(rho, 2, 3, keep),
                                       opcore.partial_trace(sigma, 2, 3, keep))
        assert part <= full + 1e-9

    def test_conditional_examples(self):
        rho, sigma = rand_state(8, 1), rand_state(8, 2, 0.4)
        assert opcore.conditional_relative_entropy(rho, sigma, 2, 3, []) == 0.0
        full = opcore.relative_entropy(rho, sigma)
        assert opcore.conditional_relative_entropy(rho, sigma, 2, 3, [0, 1, 2]) == full
        assert abs(opcore.conditional_relative_entropy(rho, rho, 2, 3, [1])) < 1e-9

    @settings(max_examples=25, deadline=None)
    @given(seeds, seeds, st.sets(st.integers(0, 2), min_size=1, max_size=3))
    def test_conditional_non_negative(self, s1, s2, region):
        rho, sigma = rand_state(8, s1), rand_state(8, s2, 0.3)
        assert opcore.conditional_relative_entropy(rho, sigma, 2, 3, sorted(region)) >= -1e-9


class TestInnerProducts:
    @pytest.mark.parametrize("s", [0.0, 0.3, 0.5, 1.0])
    def test_identity_norm(self, s):
        sigma = rand_state(4, 3, 0.5)
        assert abs(opcore.weighted_inner(np.eye(4), np.eye(4), sigma, s) - 1) < 1e-12

    def test_flat_state_is_hilbert_schmidt(self):
        rng = np.random.default_rng(5)
        x, y = rand_herm(4, rng), rand_herm(4, rng)
        val = opcore.weighted_inner(x, y, np.eye(4) / 4, 0.5)
        assert abs(val - np.trace(x.conj().T @ y) / 4) < 1e-12

    def test_positive_definite(self):
        rng = np.random.default_rng(6)
        sigma = rand_state(4, 4, 0.5)
        for _ in range(20):
            x = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
            assert opcore.weighted_inner(x, x, sigma, 0.5).real > 0

    def test_singular_state(self):
        with pytest.raises(SingularityError):
            opcore.weighted_inner(np.eye(2), np.eye(2), np.diag([1.0, 0.0]), 0.5)


class TestSerialization:
    def test_binary_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        x = rand_herm(4, rng)
        reg = opcore.Register(((0, 1), (1, 1)), 2)
        opcore.write_operator(tmp_path / "op.bin", x, reg)
        y, reg2 = opcore.read_operator(tmp_path / "op.bin")
        assert np.array_equal(x, y) and reg2 == reg

    def test_json_round_trip(self):
        rng = np.random.default_rng(9)
        x = rand_herm(4, rng)
        reg = opcore.Register(((0,), (1,)), 2)
        y, reg2 = opcore.operator_from_json(opcore.operator_to_json(x, reg))
        assert np.array_equal(x, y) and reg2 == reg

    def test_bad_magic(self, tmp_path):
        (tmp_path / "junk").write_bytes(b"nope" + b"\0" * 64)
        with pytest.raises(DomainError):
            opcore.read_operator(tmp_path / "junk")


class TestBasis:
    @pytest.mark.parametrize("d", [2, 3, 4])
    def test_orthonormal(self, d):
        basis = opcore.hermitian_basis(d)
        gram = np.array([[np.trace(a.conj().T @ b) for b in basis] for a in basis])
        assert np.allclose(gram, np.eye(d * d), atol=1e-12)
        assert all(opcore.is_hermitian(b) for b in basis)

    def test_support_weights(self):
        z = np.diag([1.0, -1.0])
        x = np.kron(np.kron(z, np.eye(2)), z) + 0.5 * np.eye(8)
        w = opcore.support_weights(x, 2, 3, tol=1e-20)
        assert set(w) == {frozenset({0, 2}), frozenset()}

    def test_register_checks(self):
        with pytest.raises(DomainError):
            opcore.Register((0, 0))
        with pytest.raises(DomainError):
            opcore.Register((0, 1)).positions([2])
