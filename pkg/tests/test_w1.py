import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from davies_lab import opcore
from davies_lab.davies import build_davies
from davies_lab.errors import CapabilityError, HorizonError
from davies_lab.models import ising_chain
from davies_lab.w1 import (classical_w1, first_crossing, lipschitz_norm, w1_distance,
                           w1_mixing_time, witness_is_feasible)
from oracles import kron_all

Z = np.diag([1.0, -1.0]).astype(complex)


def basis_state(bits):
    dim = 2 ** len(bits)
    idx = int("".join(map(str, bits)), 2)
    rho = np.zeros((dim, dim), dtype=complex)
    rho[idx, idx] = 1
    return rho


def transport_w1(p, q, n):
    """Primal optimal transport between distributions on {0,1}^n with the Hamming cost."""
    configs = list(itertools.product((0, 1), repeat=n))
    m = len(configs)
    cost = np.array([[sum(a != b for a, b in zip(x, y)) for y in configs] for x in configs], float)
    a_eq = []
    for i in range(m):
        row = np.zeros((m, m))
        row[i, :] = 1
        a_eq.append(row.ravel())
    for j in range(m):
        col = np.zeros((m, m))
        col[:, j] = 1
        a_eq.append(col.ravel())
    res = linprog(cost.ravel(), A_eq=np.array(a_eq), b_eq=np.concatenate([p, q]),
                  bounds=(0, None), method="highs")
    return res.fun


def rand_state(dim, seed, mix=0.2):
    return opcore.random_density(dim, np.random.default_rng(seed), mix)


class TestExamples:
    def test_opposite_basis_states(self):
        res = w1_distance(basis_state([0, 0]), basis_state([1, 1]), 2, 2)
        assert abs(res.value - 2) < 1e-9
        assert abs(res.lower - 2) < 1e-9 and abs(res.upper - 2) < 1e-9

    def test_equal_states(self):
        rho = rand_state(4, 1)
        res = w1_distance(rho, rho, 2, 2)
        assert res.value == 0.0 and not np.any(res.witness)

    def test_lipschitz_of_local_z(self):
        h = opcore.embed(Z, 2, 3, [1])
        res = lipschitz_norm(h, 2, 3)
        assert abs(res.value - 2) < 1e-6

    def test_lipschitz_of_identity(self):
        assert lipschitz_norm(3.0 * np.eye(4), 2, 2).value < 1e-6

    def test_dimension_cap(self):
        with pytest.raises(CapabilityError):
            w1_distance(np.eye(64) / 64, np.eye(64) / 64, 2, 6)


class TestClassical:
    @pytest.mark.parametrize("seed", range(5))
    def test_linear_program_matches_transport(self, seed):
        rng = np.random.default_rng(seed)
        p, q = rng.dirichlet(np.ones(8)), rng.dirichlet(np.ones(8))
        val, _ = classical_w1(p - q, 2, 3)
        assert abs(val - transport_w1(p, q, 3)) < 1e-9

    @pytest.mark.parametrize("seed", range(4))
    def test_sdp_matches_linear_program_on_commuting_pairs(self, seed):
        rng = np.random.default_rng(100 + seed)
        n = 2 + seed % 2
        p, q = rng.dirichlet(np.ones(2**n)), rng.dirichlet(np.ones(2**n))
        rho, sigma = np.diag(p).astype(complex), np.diag(q).astype(complex)
        lp = w1_distance(rho, sigma, 2, n, "lp")
        sdp = w1_distance(rho, sigma, 2, n, "sdp")
        assert abs(lp.value - sdp.value) < 1e-6


class TestBounds:
    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("method", ["sdp", "bounds"])
    def test_sandwich_and_certificate(self, seed, method):
        n = 2 + seed % 2
        rho, sigma = rand_state(2**n, seed), rand_state(2**n, seed + 50)
        res = w1_distance(rho, sigma, 2, n, method)
        tn = opcore.trace_norm(rho - sigma)
        assert 0.5 * tn <= res.lower + 1e-12
        assert res.lower <= res.value <= res.upper
        assert res.upper <= n * tn + 1e-12
        assert witness_is_feasible(res, 2, n)

    def test_triangle_and_homogeneity(self):
        a, b, c = (rand_state(4, s) for s in (1, 2, 3))
        ab = w1_distance(a, b, 2, 2, "sdp")
        bc = w1_distance(b, c, 2, 2, "sdp")
        ac = w1_distance(a, c, 2, 2, "sdp")
        assert ac.lower <= ab.upper + bc.upper + 1e-9
        half = w1_distance(0.5 * a + 0.5 * b, b, 2, 2, "sdp")
        assert abs(half.value - 0.5 * ab.value) < 1e-5

    def test_ancilla_invariance(self):
        rho, sigma = rand_state(2, 4), rand_state(2, 5)
        tau = rand_state(2, 6)
        base = w1_distance(rho, sigma, 2, 1, "sdp")
        big = w1_distance(np.kron(rho, tau), np.kron(sigma, tau), 2, 2, "sdp")
        assert big.lower - 1e-6 <= base.upper and base.lower - 1e-6 <= big.upper

    def test_product_of_two_flips(self):
        rho = kron_all([basis_state([0])] * 3)
        sigma = kron_all([basis_state([1])] * 3)
        assert abs(w1_distance(rho, sigma, 2, 3).value - 3) < 1e-9


class TestMixing:
    def test_first_crossing_exponential(self):
        t = first_crossing(lambda s: np.exp(-s), 0.1, 100.0, rel_tol=1e-10)
        assert abs(t - np.log(10)) < 1e-8

    def test_first_crossing_already_below(self):
        assert first_crossing(lambda s: 0.01, 0.1, 1.0) == 0.0

    def test_horizon(self):
        with pytest.raises(HorizonError):
            first_crossing(lambda s: 1.0, 0.1, 10.0)

    def test_large_eps_is_immediate(self):
        h = ising_chain(2, 1.0)
        gen = build_davies(h, h.sites, 0.5)
        # W1 never exceeds |Lambda| times the trace norm, which is at most 2
        assert w1_mixing_time(gen, 4.0, method="bounds") == 0.0

    def test_needs_whole_system(self):
        h = ising_chain(3, 1.0)
        with pytest.raises(CapabilityError):
            w1_mixing_time(build_davies(h, [h.sites[0]], 0.5), 0.1)
