"""Davies generators of commuting Hamiltonians and their conditional expectations.

Jumps on site k are the Hermitian basis ``G_a / sqrt(d)``, so that
``sum_a S_a X S_a`` is the normalized partial trace on k. Each jump is split
into Bohr components with the spectrum of the terms touching k:
``S^w = sum P_e S P_f`` over eigenvalue pairs with ``E_f - E_e = w``, so ``w``
is the energy released by the jump and ``exp(-itH) S exp(itH) = sum exp(itw) S^w``.

A generator for a region A acts on the register of A together with every
site of a term touching A; operators on larger registers are handled by
``apply`` (tensoring with the identity) or ``lift``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, expm_multiply

from . import opcore
from .errors import CapabilityError, ConfigError, ConvergenceError, ModelError
from .models import LocalHamiltonian, gibbs_state, site_set

BOHR_CLUSTER_TOL = 1e-9
KERNEL_TOL = 1e-9
DEGENERATE_TOL = 1e-11
PETZ_TOL = 1e-11
EP_REGULARIZATION = 1e-12
MAX_DENSE_DIM = 2**6
MAX_STATE_DIM = 2**10


# -- weights -----------------------------------------------------------------

def _davies_weight(beta: float, omega: np.ndarray) -> np.ndarray:
    return np.exp(0.5 * beta * omega)


def _glauber_weight(beta: float, omega: np.ndarray) -> np.ndarray:
    return 2.0 / (1.0 + np.exp(-beta * omega))


def _metropolis_weight(beta: float, omega: np.ndarray) -> np.ndarray:
    return np.exp(np.minimum(0.0, beta * omega))


WEIGHT_SCHEMES: dict[str, Callable] = {
    "davies": _davies_weight,
    "glauber": _glauber_weight,
    "metropolis": _metropolis_weight,
}


@dataclass(frozen=True)
class WeightScheme:
    name: str
    function: Callable = field(compare=False, repr=False)

    def __call__(self, beta: float, omega) -> np.ndarray:
        return np.asarray(self.function(beta, np.asarray(omega, dtype=float)), dtype=float)

    def kms_residual(self, beta: float, omegas: Iterable[float]) -> float:
        """max |chi(-w) - exp(-beta w) chi(w)| relative to chi(-w)."""
        w = np.asarray(list(omegas), dtype=float)
        if w.size == 0:
            return 0.0
        lhs, rhs = self(beta, -w), np.exp(-beta * w) * self(beta, w)
        return float(np.max(np.abs(lhs - rhs) / np.maximum(np.abs(lhs), 1e-300)))


def weight_scheme(spec: str | Callable | WeightScheme = "davies") -> WeightScheme:
    if isinstance(spec, WeightScheme):
        return spec
    if callable(spec):
        return WeightScheme(getattr(spec, "__name__", "custom"), spec)
    if spec not in WEIGHT_SCHEMES:
        raise ConfigError(f"unknown weight scheme {spec!r}; choose from {sorted(WEIGHT_SCHEMES)}")
    return WeightScheme(spec, WEIGHT_SCHEMES[spec])


# -- jumps -------------------------------------------------------------------

def neighbourhood(h: LocalHamiltonian, region) -> tuple:
    """The region together with every site of a term meeting it, in register order."""
    sites = set(site_set(region)) & set(h.sites)
    grown = set(sites)
    for support in h.supports:
        if support & sites:
            grown |= support
    return tuple(s for s in h.sites if s in grown)


def cluster_values(values: np.ndarray, tol: float = BOHR_CLUSTER_TOL) -> np.ndarray:
    """Map sorted-ish floats to representatives; values closer than ``tol`` share one."""
    order = np.argsort(values)
    reps = np.empty_like(values)
    start = 0
    for i in range(1, len(order) + 1):
        if i == len(order) or values[order[i]] - values[order[i - 1]] > tol:
            block = order[start:i]
            reps[block] = np.mean(values[block])
            start = i
    return reps


@dataclass(frozen=True, eq=False)
class JumpSet:
    """Jump operators of one site and their Bohr components, on the site's neighbourhood."""

    site: tuple
    sites: tuple
    d: int
    jumps: tuple[np.ndarray, ...]
    components: tuple[tuple[int, float, np.ndarray], ...]  # (basis index, frequency, operator)
    local_hamiltonian: np.ndarray

    @property
    def frequencies(self) -> np.ndarray:
        return np.unique([w for _, w, _ in self.components])

    def kraus_residual(self, x: np.ndarray) -> float:
        """|| sum_a S_a x S_a - E_k(x) || for an operator on the neighbourhood register."""
        reg = opcore.Register(self.sites, self.d)
        out = sum(s @ x @ s for s in self.jumps)
        target = opcore.normalized_partial_trace(x, self.d, reg.n, reg.positions([self.site]))
        return float(np.max(np.abs(out - target)))

    def fourier_residual(self, times: Sequence[float] = (0.0, 0.1, 0.7)) -> float:
        w, v = opcore.eigh(self.local_hamiltonian)
        worst = 0.0
        for a, s in enumerate(self.jumps):
            comps = [(om, m) for b, om, m in self.components if b == a]
            worst = max(worst, float(np.max(np.abs(sum(m for _, m in comps) - s))))
            for t in times:
                u = (v * np.exp(-1j * t * w)) @ v.conj().T
                lhs = u @ s @ u.conj().T
                rhs = sum(np.exp(1j * t * om) * m for om, m in comps)
                worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        return worst


def jump_set(h: LocalHamiltonian, site) -> JumpSet:
    site = tuple(site)
    sites = neighbourhood(h, [site])
    reg = opcore.Register(sites, h.d)
    pos = reg.positions([site])
    local_h = h.touching([site], within=sites)
    basis = [g / np.sqrt(h.d) for g in opcore.hermitian_basis(h.d)]
    jumps = tuple(opcore.embed(g, h.d, reg.n, pos) for g in basis)
    w, v = opcore.eigh(local_h)
    levels = cluster_values(w)
    uniq = np.unique(levels)
    projectors = [v[:, levels == e] @ v[:, levels == e].conj().T for e in uniq]
    gaps = cluster_values(np.subtract.outer(uniq, uniq).ravel()).reshape(len(uniq), len(uniq))
    components = []
    for a, s in enumerate(jumps):
        parts: dict[float, np.ndarray] = {}
        for i, pi in enumerate(projectors):
            left = pi @ s
            for j, pj in enumerate(projectors):
                piece = left @ pj
                if np.max(np.abs(piece)) < 1e-14:
                    continue
                # jump takes level j to level i and releases E_j - E_i
                omega = float(-gaps[i, j]) + 0.0
                parts[omega] = parts.get(omega, 0) + piece
        components += [(a, om, m) for om, m in sorted(parts.items())]
    return JumpSet(site, sites, h.d, jumps, tuple(components), local_h)


# -- generators --------------------------------------------------------------

def dissipator(j: np.ndarray) -> np.ndarray:
    """Superoperator of X -> J X J^dag - {J^dag J, X}/2 in row-major vectorization."""
    jj = j.conj().T @ j
    eye = np.eye(j.shape[0])
    return np.kron(j, j.conj()) - 0.5 * np.kron(jj, eye) - 0.5 * np.kron(eye, jj.T)


@dataclass(frozen=True, eq=False)
class DaviesGenerator:
    """Davies generator of a region, stored on the register of its neighbourhood."""

    model: LocalHamiltonian
    region: tuple
    sites: tuple
    beta: float
    scheme: WeightScheme
    rates: tuple[float, ...]
    operators: tuple[np.ndarray, ...]
    chi_min: float
    chi_max: float
    chi0_min: float

    @property
    def d(self) -> int:
        return self.model.d

    @cached_property
    def register(self) -> opcore.Register:
        return opcore.Register(self.sites, self.d)

    @property
    def dim(self) -> int:
        return self.register.dim

    @cached_property
    def matrix(self) -> np.ndarray:
        if self.dim > MAX_DENSE_DIM:
            raise CapabilityError(f"dense superoperator needs register dimension <= {MAX_DENSE_DIM}, "
                                  f"got {self.dim}")
        out = np.zeros((self.dim**2, self.dim**2), dtype=complex)
        for rate, j in zip(self.rates, self.operators):
            out += rate * dissipator(j)
        return out

    @cached_property
    def local_gibbs(self) -> np.ndarray:
        """Gibbs state of the terms inside the neighbourhood; the generator is GNS-symmetric for it."""
        return gibbs_state(self.model, self.beta, self.sites)

    @cached_property
    def global_gibbs(self) -> np.ndarray:
        if self.model.register.dim > MAX_STATE_DIM:
            raise CapabilityError(f"state dimension capped at {MAX_STATE_DIM}")
        return gibbs_state(self.model, self.beta)

    @cached_property
    def _sparse_parts(self) -> tuple[list, np.ndarray]:
        """Scaled sparse jumps and the summed rate * J^dag J, for matrix-free products."""
        jumps = [sparse.csr_matrix(np.sqrt(rate) * j) for rate, j in zip(self.rates, self.operators)]
        damping = sum((j.conj().T @ j).toarray() for j in jumps)
        return jumps, np.asarray(damping)

    def local_apply(self, x: np.ndarray) -> np.ndarray:
        """Apply the generator to an operator on its own register (matrix-free)."""
        jumps, damping = self._sparse_parts
        out = -0.5 * (damping @ x + x @ damping)
        for j in jumps:
            out += j @ (j @ x.conj().T).conj().T
        return out

    def local_apply_dual(self, x: np.ndarray) -> np.ndarray:
        """Heisenberg picture of ``local_apply``."""
        jumps, damping = self._sparse_parts
        out = -0.5 * (damping @ x + x @ damping)
        for j in jumps:
            jd = j.conj().T
            out += jd @ (jd @ x.conj().T).conj().T
        return out

    def _positions(self, register: opcore.Register) -> list[int]:
        return register.positions(self.sites)

    def apply(self, x: np.ndarray, register: opcore.Register | None = None) -> np.ndarray:
        register = register or self.model.register
        if self.dim <= MAX_DENSE_DIM:
            return opcore.apply_local_superop(self.matrix, x, self.d, register.n,
                                              self._positions(register))
        if register.sites == self.sites:
            return self.local_apply(x)
        raise CapabilityError("matrix-free application needs the generator's own register")

    def lift(self, register: opcore.Register | None = None) -> np.ndarray:
        register = register or self.model.register
        return opcore.lift_superop(self.matrix, self.d, register.n, self._positions(register))

    def gns_residual(self, sigma: np.ndarray | None = None) -> float:
        """max |(sigma x I) M^dag - M (sigma x I)|: detailed balance of the Heisenberg picture."""
        sigma = self.local_gibbs if sigma is None else sigma
        s = opcore.spre(sigma)
        m = self.matrix
        return float(np.max(np.abs(s @ m.conj().T - m @ s)))

    def ccp_min_eigenvalue(self) -> float:
        """Smallest eigenvalue of the Choi matrix of L compressed off the maximally entangled vector.

        Non-negative (up to rounding) exactly when L generates completely positive maps.
        """
        dim = self.dim
        # Choi[(i, a), (j, b)] = L(|i><j|)[a, b] = M[a * dim + b, i * dim + j]
        choi = self.matrix.reshape(dim, dim, dim, dim).transpose(2, 0, 3, 1).reshape(dim**2, dim**2)
        omega = np.eye(dim).reshape(-1) / np.sqrt(dim)
        perp = np.eye(dim**2) - np.outer(omega, omega)
        return float(np.linalg.eigvalsh(opcore.hermitize(perp @ choi @ perp))[0])


def build_davies(h: LocalHamiltonian, region, beta: float, weights="davies",
                 kms_tol: float = 1e-12) -> DaviesGenerator:
    """Sum over the sites of ``region`` of the single-site Davies generators."""
    if beta < 0 or not np.isfinite(beta):
        raise ConfigError(f"inverse temperature must be finite and non-negative, got {beta}")
    scheme = weight_scheme(weights)
    region_sites = tuple(s for s in h.sites if s in site_set(region))
    if not region_sites:
        raise ConfigError("Davies generator needs a non-empty region inside the model")
    sites = neighbourhood(h, region_sites)
    reg = opcore.Register(sites, h.d)
    rates, ops, omegas = [], [], []
    for k in region_sites:
        js = jump_set(h, k)
        pos = reg.positions(js.sites)
        for _, om, m in js.components:
            rates.append(float(scheme(beta, om)))
            ops.append(opcore.embed(m, h.d, reg.n, pos))
            omegas.append(om)
    resid = scheme.kms_residual(beta, omegas)
    if resid > kms_tol:
        raise ConfigError(f"weight scheme {scheme.name!r} violates the KMS condition "
                          f"(relative residual {resid:.3e})")
    chis = np.asarray(rates)
    chi0 = scheme(0.0, np.asarray(omegas))
    if np.any(chis <= 0) or not np.all(np.isfinite(chis)):
        raise ConfigError(f"weight scheme {scheme.name!r} produced non-positive or infinite rates")
    return DaviesGenerator(h, region_sites, sites, float(beta), scheme, tuple(rates), tuple(ops),
                           float(chis.min()), float(chis.max()), float(np.min(chi0)))


def jump_frequencies(gen: DaviesGenerator) -> np.ndarray:
    return np.unique([w for k in gen.region for _, w, _ in jump_set(gen.model, k).components])


# -- symmetrization ----------------------------------------------------------

def _gamma_quarter(sigma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Superoperators of X -> s^{1/4} X s^{1/4} and of its inverse."""
    if sigma.shape[0] > MAX_DENSE_DIM:
        raise CapabilityError(f"dense superoperator needs register dimension <= {MAX_DENSE_DIM}, "
                              f"got {sigma.shape[0]}")
    q = opcore.powm(sigma, 0.25)
    qi = opcore.powm(sigma, -0.25)
    return np.kron(q, q.T), np.kron(qi, qi.T)


def symmetrized(gen: DaviesGenerator) -> np.ndarray:
    """Gamma^{-1/2} L Gamma^{1/2}: Hermitian when L satisfies detailed balance."""
    g, gi = _gamma_quarter(gen.local_gibbs)
    return opcore.hermitize(gi @ gen.matrix @ g)


@dataclass(frozen=True)
class GapReport:
    gap: float | None
    kernel_dim: int
    degenerate: bool


def spectral_gap(gen: DaviesGenerator) -> GapReport:
    """Smallest non-zero eigenvalue of -L in the detailed-balance geometry."""
    lam = np.linalg.eigvalsh(-symmetrized(gen))
    kernel = int(np.sum(lam <= KERNEL_TOL))
    rest = lam[lam > KERNEL_TOL]
    ambiguous = bool(np.any((lam > DEGENERATE_TOL) & (lam <= KERNEL_TOL)))
    return GapReport(float(rest.min()) if rest.size else None, kernel, ambiguous or not rest.size)


# -- conditional expectations ------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConditionalExpectation:
    """Channel (Schroedinger picture) on the register ``sites``."""

    region: tuple
    sites: tuple
    d: int
    matrix: np.ndarray
    route: str

    def apply(self, x: np.ndarray, register: opcore.Register) -> np.ndarray:
        return opcore.apply_local_superop(self.matrix, x, self.d, register.n,
                                          register.positions(self.sites))

    def lift(self, register: opcore.Register) -> np.ndarray:
        return opcore.lift_superop(self.matrix, self.d, register.n, register.positions(self.sites))

    def dual(self) -> np.ndarray:
        return self.matrix.conj().T


def superop_from_map(fn: Callable[[np.ndarray], np.ndarray], dim: int) -> np.ndarray:
    out = np.empty((dim * dim, dim * dim), dtype=complex)
    basis = np.zeros((dim, dim), dtype=complex)
    for j in range(dim * dim):
        basis.flat[j] = 1.0
        out[:, j] = fn(basis).reshape(-1)
        basis.flat[j] = 0.0
    return out


def petz_map(sigma: np.ndarray, d: int, n: int, traced: Sequence[int]) -> np.ndarray:
    """X -> sigma^{1/2} (s_c^{-1/2} tr_A[X] s_c^{-1/2} x Id_A) sigma^{1/2}, s_c the marginal off A."""
    keep = [i for i in range(n) if i not in set(traced)]
    half = opcore.powm(sigma, 0.5)
    marg = opcore.partial_trace(sigma, d, n, keep)
    mhalf = opcore.powm(marg, -0.5) if keep else np.eye(1)

    def fn(x):
        inner = mhalf @ opcore.partial_trace(x, d, n, keep) @ mhalf
        return half @ opcore.embed(inner, d, n, keep) @ half

    return superop_from_map(fn, d**n)


def conditional_expectation(gen: DaviesGenerator, route: str = "spectral",
                            max_squarings: int = 200) -> ConditionalExpectation:
    """Infinite-time limit of exp(t L_A), by kernel projection or by iterated Petz recovery."""
    d, reg = gen.d, gen.register
    if route == "spectral":
        g, gi = _gamma_quarter(gen.local_gibbs)
        w, v = np.linalg.eigh(-symmetrized(gen))
        ker = v[:, w <= KERNEL_TOL]
        proj = ker @ ker.conj().T
        return ConditionalExpectation(gen.region, gen.sites, d, g @ proj @ gi, route)
    if route == "petz":
        m = petz_map(gen.local_gibbs, d, reg.n, reg.positions(gen.region))
        for _ in range(max_squarings):
            nxt = m @ m
            resid = float(np.max(np.abs(nxt - m)))
            m = nxt
            if resid < PETZ_TOL:
                return ConditionalExpectation(gen.region, gen.sites, d, m, route)
        raise ConvergenceError(f"Petz iteration did not converge (residual {resid:.3e})", resid)
    raise ConfigError(f"unknown route {route!r}")


def depolarizing_expectation(region, sites: Sequence, d: int) -> ConditionalExpectation:
    """Normalized partial trace on ``region`` as a channel on the register ``sites``."""
    sites = tuple(sites)
    reg = opcore.Register(sites, d)
    traced = reg.positions(set(site_set(region)) & set(sites))
    m = superop_from_map(lambda x: opcore.normalized_partial_trace(x, d, reg.n, traced), reg.dim)
    return ConditionalExpectation(tuple(s for s in sites if s in site_set(region)), sites, d, m,
                                  "depolarizing")


# -- entropy production and dynamics -----------------------------------------

def _regularize(rho: np.ndarray) -> np.ndarray:
    dim = rho.shape[0]
    return (1 - EP_REGULARIZATION) * rho + EP_REGULARIZATION * np.eye(dim) / dim


def entropy_production(gen: DaviesGenerator, rho: np.ndarray, sigma: np.ndarray | None = None,
                       register: opcore.Register | None = None) -> float:
    """-tr[L(rho)(log rho - log sigma)] on the model register (default)."""
    register = register or gen.model.register
    sigma = gen.global_gibbs if sigma is None else sigma
    rho = _regularize(rho)
    lrho = gen.apply(rho, register)
    diff = opcore.logm(rho, name="state") - opcore.logm(sigma, name="reference state")
    return float(-np.real(np.vdot(lrho.conj().T, diff)))


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: tuple[np.ndarray, ...]
    relative_entropy: np.ndarray
    trace_distance: np.ndarray


def project_density(rho: np.ndarray) -> np.ndarray:
    """Nearest density operator: Hermitize, clip negative eigenvalues, renormalize."""
    w, v = opcore.eigh(rho)
    w = np.clip(w, 0.0, None)
    out = (v * (w / w.sum())) @ v.conj().T
    return opcore.hermitize(out)


def propagator(gen: DaviesGenerator, t: float) -> np.ndarray:
    """exp(t L) on the generator register by diagonalization in the symmetric frame."""
    g, gi = _gamma_quarter(gen.local_gibbs)
    w, v = np.linalg.eigh(symmetrized(gen))
    return g @ (v * np.exp(t * w)) @ v.conj().T @ gi


def evolve(gen: DaviesGenerator, rho0: np.ndarray, times: Sequence[float],
           sigma: np.ndarray | None = None, register: opcore.Register | None = None
           ) -> Trajectory:
    """rho_t = exp(t L) rho0 on the model register (default)."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ConfigError("evolution times must be sorted and non-negative")
    register = register or gen.model.register
    sigma = gen.global_gibbs if sigma is None else sigma
    positions = register.positions(gen.sites)
    states = []
    if gen.dim <= MAX_DENSE_DIM:
        g, gi = _gamma_quarter(gen.local_gibbs)
        w, v = np.linalg.eigh(symmetrized(gen))
        left, right = g @ v, v.conj().T @ gi
        for t in times:
            if t == 0:
                states.append(rho0.copy())
                continue
            prop = (left * np.exp(t * w)) @ right
            states.append(project_density(
                opcore.apply_local_superop(prop, rho0, gen.d, register.n, positions)))
    else:
        if register.sites != gen.sites or register.dim > MAX_STATE_DIM:
            raise CapabilityError("matrix-free evolution needs the generator register, dim <= 2^10")
        dim = gen.dim
        op = LinearOperator((dim * dim, dim * dim), dtype=complex,
                            matvec=lambda x: gen.local_apply(x.reshape(dim, dim)).reshape(-1),
                            rmatvec=lambda x: gen.local_apply_dual(x.reshape(dim, dim)).reshape(-1))
        trace_bound = -sum(gen.rates) * dim * dim
        for t in times:
            if t == 0:
                states.append(rho0.copy())
                continue
            vec = expm_multiply(op * t, rho0.reshape(-1).astype(complex), traceA=trace_bound * t)
            states.append(project_density(vec.reshape(dim, dim)))
    rel = np.array([opcore.relative_entropy(s, sigma) for s in states])
    dist = np.array([opcore.trace_norm(s - sigma) for s in states])
    return Trajectory(times, tuple(states), rel, dist)
