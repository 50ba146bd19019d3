"""Commuting local Hamiltonians, their Gibbs states and effective Hamiltonians.

A model lives on a subset of sites of a :class:`~davies_lab.lattice.Lattice`;
its register lists those sites in lattice (lexicographic) order. Terms are
stored on their own support register and embedded on demand.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from . import opcore
from ._kernels import ising_energies
from .errors import CapabilityError, ConfigError, ModelError
from .lattice import Lattice, Region, diameter

COMMUTATION_TOL = 1e-10
MAX_EFFECTIVE_SITES = 8

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1.0, -1.0]).astype(complex),
}

Site = tuple[int, ...]


def site_set(region) -> frozenset:
    """Sites of a Region or of any iterable of coordinate tuples."""
    if isinstance(region, Region):
        return region.sites
    return frozenset(tuple(int(v) for v in s) for s in region)


@dataclass(frozen=True)
class Term:
    support: tuple[Site, ...]  # sorted
    matrix: np.ndarray = field(compare=False, repr=False)


@dataclass(frozen=True)
class ClassicalData:
    """Edge list, couplings and fields of a diagonal Ising model, by register position."""

    edges: np.ndarray
    couplings: np.ndarray
    fields: np.ndarray


@dataclass(frozen=True, eq=False)
class LocalHamiltonian:
    lattice: Lattice
    sites: tuple[Site, ...]
    terms: tuple[Term, ...]
    d: int = 2
    kind: str = "terms"
    classical: ClassicalData | None = None

    @cached_property
    def register(self) -> opcore.Register:
        return opcore.Register(self.sites, self.d)

    @cached_property
    def supports(self) -> list[frozenset]:
        return [frozenset(t.support) for t in self.terms]

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def kappa(self) -> int:
        return max((len(t.support) for t in self.terms), default=0)

    @property
    def range(self) -> int:
        return max((diameter(t.support, self.lattice.metric) for t in self.terms), default=0)

    @cached_property
    def strength(self) -> float:
        return max((opcore.op_norm(t.matrix) for t in self.terms), default=0.0)

    @cached_property
    def growth(self) -> int:
        counts: dict[Site, int] = {}
        for t in self.terms:
            for s in t.support:
                counts[s] = counts.get(s, 0) + 1
        return max(counts.values(), default=0)

    @property
    def marginal_commuting(self) -> bool:
        return self.kind in ("ising", "pauli")

    @cached_property
    def is_diagonal(self) -> bool:
        return all(_is_diag(t.matrix) for t in self.terms)

    def metadata(self) -> dict:
        return {"kappa": self.kappa, "r": self.range, "J": self.strength, "g": self.growth,
                "n_sites": self.n_sites, "d": self.d, "kind": self.kind}

    @cached_property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps([self.lattice.D, self.lattice.L, self.lattice.metric, self.d,
                             [list(s) for s in self.sites]]).encode())
        for t in self.terms:
            h.update(json.dumps([list(s) for s in t.support]).encode())
            h.update(np.ascontiguousarray(t.matrix, dtype=complex).tobytes())
        return h.hexdigest()

    # -- matrices ------------------------------------------------------------

    def _register_for(self, region) -> opcore.Register:
        if region is None:
            return self.register
        return self.register.sub(site_set(region) & set(self.sites))

    def hamiltonian(self, region=None) -> np.ndarray:
        """H_R: the sum of terms supported inside ``region``, on the register of ``region``."""
        reg = self._register_for(region)
        inside = set(reg.sites)
        return self._sum_terms([t for t in self.terms if set(t.support) <= inside], reg)

    def touching(self, region, within=None) -> np.ndarray:
        """Sum of terms meeting ``region``, on the register of ``within`` (default: all sites)."""
        reg = self._register_for(within)
        hit = site_set(region)
        return self._sum_terms([t for t in self.terms if hit & set(t.support)], reg)

    def _sum_terms(self, terms: Sequence[Term], reg: opcore.Register) -> np.ndarray:
        out = np.zeros((reg.dim, reg.dim), dtype=complex)
        for t in terms:
            out += opcore.embed(t.matrix, self.d, reg.n, reg.positions(t.support))
        return out

    def energies(self, region=None) -> np.ndarray:
        """Diagonal of H_R for a diagonal model."""
        if not self.is_diagonal:
            raise CapabilityError("energies() needs a diagonal model")
        reg = self._register_for(region)
        if self.classical is not None and reg.n == self.n_sites:
            c = self.classical
            return ising_energies(reg.n, c.edges, c.couplings, c.fields)
        return np.real(np.diag(self.hamiltonian(region))).copy()


def _merge_terms(lattice: Lattice, sites: Sequence[Site], raw: Iterable[tuple[Sequence, np.ndarray]],
                 d: int, check: bool = True) -> tuple[Term, ...]:
    site_ok = set(sites)
    normalized: list[Term] = []
    merged: dict[tuple, np.ndarray] = {}
    for support, mat in raw:
        support = [tuple(int(v) for v in s) for s in support]
        if len(set(support)) != len(support):
            raise ModelError(f"term support {support} repeats a site")
        missing = [s for s in support if s not in site_ok]
        if missing:
            raise ModelError(f"term support contains sites {missing} outside the model")
        mat = np.asarray(mat, dtype=complex)
        dim = d ** len(support)
        if mat.shape != (dim, dim):
            raise ModelError(f"term on {support} has shape {mat.shape}, expected {(dim, dim)}")
        if not opcore.is_hermitian(mat):
            raise ModelError(f"term on {support} is not Hermitian")
        order = sorted(range(len(support)), key=lambda i: support[i])
        mat = opcore.permute_sites(mat, d, order)
        key = tuple(support[i] for i in order)
        if check:
            normalized.append(Term(key, mat))
        merged[key] = merged.get(key, 0) + mat
    if check:
        # before merging, so that two non-commuting terms on one support are caught
        _check_commuting(normalized, d)
    return tuple(Term(k, m) for k, m in sorted(merged.items()) if np.any(m != 0))


def _is_diag(m: np.ndarray) -> bool:
    return np.count_nonzero(m - np.diag(np.diag(m))) == 0


def _check_commuting(terms: Sequence[Term], d: int) -> None:
    for a, b in itertools.combinations(terms, 2):
        common = set(a.support) & set(b.support)
        if not common or (a.support == b.support and a.matrix is b.matrix):
            continue
        if _is_diag(a.matrix) and _is_diag(b.matrix):
            continue
        reg = opcore.Register(tuple(sorted(set(a.support) | set(b.support))), d)
        ma = opcore.embed(a.matrix, d, reg.n, reg.positions(a.support))
        mb = opcore.embed(b.matrix, d, reg.n, reg.positions(b.support))
        gap = np.linalg.norm(ma @ mb - mb @ ma, 2)
        if gap > COMMUTATION_TOL:
            raise ModelError(f"terms on {list(a.support)} and {list(b.support)} do not commute "
                             f"(commutator norm {gap:.3e})")


def make_hamiltonian(lattice: Lattice, terms: Iterable[tuple[Sequence, np.ndarray]], d: int = 2,
                     sites: Iterable | None = None, kind: str = "terms",
                     max_range: int | None = None, classical: ClassicalData | None = None
                     ) -> LocalHamiltonian:
    """Validate and assemble a commuting local Hamiltonian."""
    if d < 2:
        raise ConfigError(f"local dimension must be at least 2, got d={d}")
    model_sites = tuple(sorted(site_set(sites))) if sites is not None else lattice.sites
    bad = [s for s in model_sites if not lattice.contains(s)]
    if bad:
        raise ConfigError(f"model sites {bad[:3]} are outside the lattice")
    merged = _merge_terms(lattice, model_sites, terms, d)
    if max_range is not None:
        for t in merged:
            if diameter(t.support, lattice.metric) > max_range:
                raise ModelError(f"term on {list(t.support)} exceeds the interaction range {max_range}")
    return LocalHamiltonian(lattice, model_sites, merged, d, kind, classical)


# -- model zoo ---------------------------------------------------------------

def ising_model(lattice: Lattice, edges: Sequence[tuple[Site, Site]], couplings: Sequence[float],
                fields: Mapping[Site, float] | None = None, sites: Iterable | None = None
                ) -> LocalHamiltonian:
    """H = -sum J_e Z_i Z_j - sum h_i Z_i, with |0> the spin-up state."""
    model_sites = tuple(sorted(site_set(sites))) if sites is not None else lattice.sites
    pos = {s: i for i, s in enumerate(model_sites)}
    zz = np.kron(PAULI["Z"], PAULI["Z"])
    raw = [((a, b), -float(j) * zz) for (a, b), j in zip(edges, couplings) if j != 0]
    fields = dict(fields or {})
    raw += [((s,), -float(h) * PAULI["Z"]) for s, h in fields.items() if h != 0]
    try:
        classical = ClassicalData(
            np.array([[pos[tuple(a)], pos[tuple(b)]] for a, b in edges], dtype=np.int64).reshape(-1, 2),
            np.asarray(couplings, dtype=float),
            np.array([fields.get(s, 0.0) for s in model_sites], dtype=float))
    except KeyError as exc:
        raise ModelError(f"coupling touches site {exc.args[0]} outside the model") from None
    return make_hamiltonian(lattice, raw, 2, model_sites, "ising", max_range=None, classical=classical)


def nearest_neighbour_edges(lattice: Lattice, sites: Iterable | None = None) -> list[tuple[Site, Site]]:
    model_sites = sorted(site_set(sites)) if sites is not None else list(lattice.sites)
    present = set(model_sites)
    edges = []
    for s in model_sites:
        for axis in range(lattice.D):
            t = list(s)
            t[axis] += 1
            t = tuple(t)
            if t in present:
                edges.append((s, t))
    return edges


def ising_lattice(lattice: Lattice, J: float = 1.0, h: float = 0.0, sites: Iterable | None = None
                  ) -> LocalHamiltonian:
    """Uniform nearest-neighbour Ising model on the lattice (or on ``sites``)."""
    model_sites = tuple(sorted(site_set(sites))) if sites is not None else lattice.sites
    edges = nearest_neighbour_edges(lattice, model_sites)
    fields = {s: h for s in model_sites} if h else {}
    return ising_model(lattice, edges, [J] * len(edges), fields, model_sites)


def ising_chain(n: int, J: float = 1.0, h: float = 0.0) -> LocalHamiltonian:
    """Open Ising chain on the n sites 0..n-1 of a 1-D lattice."""
    lattice = Lattice(1, n // 2)
    start = -lattice.L
    sites = [(start + i,) for i in range(n)]
    return ising_lattice(lattice, J, h, sites)


def pauli_model(lattice: Lattice, strings: Iterable[tuple[float, Sequence, str]],
                sites: Iterable | None = None) -> LocalHamiltonian:
    """Sum of coeff * P_1 x ... x P_m over the given sites; the strings must commute."""
    raw = []
    for coeff, support, letters in strings:
        if len(letters) != len(support):
            raise ModelError(f"Pauli string {letters!r} does not match support {list(support)}")
        mat = np.array([[1.0]], dtype=complex)
        for ch in letters:
            if ch not in PAULI:
                raise ModelError(f"unknown Pauli letter {ch!r}")
            mat = np.kron(mat, PAULI[ch])
        raw.append((support, float(coeff) * mat))
    return make_hamiltonian(lattice, raw, 2, sites, "pauli")


def _coords(value, D: int) -> Site:
    if isinstance(value, (int, np.integer)):
        value = [value]
    site = tuple(int(v) for v in value)
    if len(site) != D:
        raise ConfigError(f"site {list(site)} does not have {D} coordinates")
    return site


def build_model(spec: Mapping) -> LocalHamiltonian:
    """Build a model from its JSON description (see README for the format)."""
    try:
        kind = spec["type"]
        lattice = Lattice(int(spec["D"]), int(spec["L"]), spec.get("metric", "chebyshev"))
    except KeyError as exc:
        raise ConfigError(f"model spec is missing {exc.args[0]!r}") from None
    if spec.get("boundary", "open") != "open":
        raise ConfigError("only open boundary conditions are supported")
    D = lattice.D
    sites = [_coords(s, D) for s in spec["sites"]] if "sites" in spec else None
    max_range = spec.get("range")
    if kind == "ising":
        couplings = spec.get("couplings", 1.0)
        fields = spec.get("fields", 0.0)
        if isinstance(couplings, (int, float)) and isinstance(fields, (int, float)):
            return ising_lattice(lattice, float(couplings), float(fields), sites)
        if isinstance(couplings, (int, float)):
            edges = nearest_neighbour_edges(lattice, sites)
            values = [float(couplings)] * len(edges)
        else:
            edges = [(_coords(c["edge"][0], D), _coords(c["edge"][1], D)) for c in couplings]
            values = [float(c["J"]) for c in couplings]
        model_sites = sites if sites is not None else lattice.sites
        if isinstance(fields, (int, float)):
            field_map = {s: float(fields) for s in model_sites} if fields else {}
        else:
            field_map = {_coords(f["site"], D): float(f["h"]) for f in fields}
        return ising_model(lattice, edges, values, field_map, sites)
    if kind == "pauli":
        strings = [(t.get("coeff", 1.0), [_coords(s, D) for s in t["sites"]], t["paulis"])
                   for t in spec["terms"]]
        return pauli_model(lattice, strings, sites)
    if kind == "terms":
        d = int(spec.get("d", 2))
        raw = []
        for t in spec["terms"]:
            mat = np.asarray(t["matrix"], dtype=float).astype(complex)
            if "matrix_imag" in t:
                mat = mat + 1j * np.asarray(t["matrix_imag"], dtype=float)
            raw.append(([_coords(s, D) for s in t["sites"]], mat))
        return make_hamiltonian(lattice, raw, d, sites, "terms", max_range=max_range)
    raise ConfigError(f"unknown model type {kind!r}")


# -- Gibbs states ------------------------------------------------------------

def _cache_path(h: LocalHamiltonian, beta: float) -> Path | None:
    root = os.environ.get("DAVIES_LAB_CACHE")
    if not root:
        return None
    key = hashlib.sha256(f"{h.digest}:{float(beta).hex()}".encode()).hexdigest()[:32]
    return Path(root) / f"gibbs_{key}.npy"


def log_partition(h: LocalHamiltonian, beta: float, region=None) -> float:
    if h.is_diagonal:
        w = h.energies(region)
    else:
        w = np.linalg.eigvalsh(opcore.hermitize(h.hamiltonian(region)))
    return float(logsumexp(-beta * w))


def gibbs_state(h: LocalHamiltonian, beta: float, region=None) -> np.ndarray:
    """sigma^R = exp(-beta H_R)/Z on the register of R (all sites by default)."""
    if not np.isfinite(beta) or beta < 0:
        raise ConfigError(f"inverse temperature must be finite and non-negative, got {beta}")
    full = region is None or set(site_set(region)) >= set(h.sites)
    path = _cache_path(h, beta) if full else None
    if path is not None and path.exists():
        return np.load(path)
    if h.is_diagonal:
        e = -beta * h.energies(region)
        p = np.exp(e - e.max())
        sigma = np.diag(p / p.sum()).astype(complex)
    else:
        sigma = opcore.gibbs_from_hamiltonian(h.hamiltonian(region), beta)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, sigma)
    return sigma


def marginal(h: LocalHamiltonian, beta: float, region, sigma: np.ndarray | None = None) -> np.ndarray:
    """sigma_R = tr_{complement of R} of the global Gibbs state, on the register of R."""
    sigma = gibbs_state(h, beta) if sigma is None else sigma
    keep = h.register.positions(site_set(region) & set(h.sites))
    return opcore.partial_trace(sigma, h.d, h.n_sites, keep)


# -- interaction norm and effective Hamiltonians -----------------------------

def interaction_norm(terms, mu_int: float, metric: str = "chebyshev") -> float:
    """sup_x sum_{X containing x} ||h_X|| exp(mu_int diam X).

    ``terms`` is a LocalHamiltonian or a mapping from supports to matrices or norms.
    """
    if isinstance(terms, LocalHamiltonian):
        metric = terms.lattice.metric
        items = [(t.support, t.matrix) for t in terms.terms]
    else:
        items = list(terms.items())
    per_site: dict = {}
    for support, value in items:
        support = tuple(support)
        if not support:
            continue
        norm = float(value) if np.isscalar(value) else opcore.op_norm(np.asarray(value))
        weight = norm * np.exp(mu_int * diameter(support, metric))
        for s in support:
            per_site[s] = per_site.get(s, 0.0) + weight
    return max(per_site.values(), default=0.0)


@dataclass(frozen=True, eq=False)
class EffectiveHamiltonian:
    """log of the normalized Gibbs marginal on a region and its local decomposition.

    ``full`` lives on the register of ``region``; ``terms[X]`` lives on the
    register of X (sorted sites) for every non-empty X inside the region, and
    ``constant`` is the identity part attached to the empty set.
    """

    region: tuple[Site, ...]
    beta: float
    d: int
    full: np.ndarray
    terms: dict
    constant: float
    log_partition: float
    metric: str = "chebyshev"

    def component(self, support) -> np.ndarray:
        """The term attached to ``support``; zero unless it lies inside the region."""
        support = frozenset(site_set(support))
        dim = self.d ** len(support)
        if not support:
            return np.array([[self.constant]], dtype=complex)
        if support in self.terms:
            return self.terms[support]
        return np.zeros((dim, dim), dtype=complex)

    def interaction_norm(self, mu_int: float) -> float:
        return interaction_norm(self.terms, mu_int, self.metric)

    def reassemble(self) -> np.ndarray:
        reg = opcore.Register(self.region, self.d)
        out = self.constant * np.eye(reg.dim, dtype=complex)
        for support, mat in self.terms.items():
            out += opcore.embed(mat, self.d, reg.n, reg.positions(support))
        return out

    def embedded(self, register: opcore.Register) -> np.ndarray:
        """``full`` tensored with the identity on the rest of ``register``."""
        return opcore.embed(self.full, self.d, register.n, register.positions(self.region))


def _log_marginals(h: LocalHamiltonian, beta: float, region: Sequence[Site], sigma: np.ndarray,
                   log_z: float) -> dict[frozenset, np.ndarray]:
    """F(Y) = log(d^{-|Y^c|} tr_{Y^c} e^{-beta H}) on the register of Y, for every Y inside region."""
    n, d = h.n_sites, h.d
    out = {}
    for size in range(len(region) + 1):
        for sub in itertools.combinations(region, size):
            keep = h.register.positions(sub)
            marg = opcore.partial_trace(sigma, d, n, keep)
            shift = log_z - (n - size) * np.log(d)
            name = "marginal on " + str(list(sub))
            if size == 0:
                out[frozenset()] = np.array([[shift + np.log(np.trace(marg).real)]], dtype=complex)
                continue
            out[frozenset(sub)] = opcore.logm(marg, name=name) + shift * np.eye(marg.shape[0])
    return out


def effective_hamiltonian(h: LocalHamiltonian, beta: float, region=None,
                          sigma: np.ndarray | None = None) -> EffectiveHamiltonian:
    """Effective Hamiltonian of the region that is kept after tracing out the rest.

    The local decomposition is the Moebius inversion of the log-marginals over
    subsets, phi(X) = sum_{Y subset X} (-1)^{|X - Y|} F(Y), so that the terms of
    any sub-region sum to its own effective Hamiltonian and a term depends on
    the region only through whether it fits inside.
    """
    region = tuple(sorted(site_set(region) & set(h.sites))) if region is not None else h.sites
    if len(region) > MAX_EFFECTIVE_SITES:
        raise CapabilityError(f"effective Hamiltonian limited to {MAX_EFFECTIVE_SITES} sites, "
                              f"got {len(region)}")
    sigma = gibbs_state(h, beta) if sigma is None else sigma
    log_z = log_partition(h, beta)
    logs = _log_marginals(h, beta, region, sigma, log_z)
    d = h.d
    terms = {}
    for size in range(1, len(region) + 1):
        for sub in itertools.combinations(region, size):
            reg = opcore.Register(sub, d)
            acc = np.zeros((reg.dim, reg.dim), dtype=complex)
            for inner in range(size + 1):
                sign = (-1) ** (size - inner)
                for y in itertools.combinations(sub, inner):
                    f = logs[frozenset(y)]
                    if inner == 0:
                        acc += sign * f[0, 0] * np.eye(reg.dim)
                    else:
                        acc += sign * opcore.embed(f, d, reg.n, reg.positions(y))
            terms[frozenset(sub)] = opcore.hermitize(acc)
    return EffectiveHamiltonian(region, float(beta), d, logs[frozenset(region)], terms,
                                float(logs[frozenset()][0, 0].real), log_z, h.lattice.metric)


def effective_conditions(h: LocalHamiltonian, eff: EffectiveHamiltonian,
                         sigma: np.ndarray | None = None) -> dict[str, float]:
    """Residuals of the three defining conditions of an effective Hamiltonian.

    ``support``: weight of each term outside its own support, after embedding
    on the whole region. ``sum``: distance between the summed terms and the
    full operator. ``exp``: distance between exp of the full operator and the
    normalized marginal of exp(-beta H).
    """
    reg = opcore.Register(eff.region, eff.d)
    leak = 0.0
    for support, mat in eff.terms.items():
        big = opcore.embed(mat, eff.d, reg.n, reg.positions(support))
        inside = set(reg.positions(support))
        for key, w in opcore.support_weights(big, eff.d, reg.n).items():
            if not key <= inside:
                leak = max(leak, w)
    total = opcore.op_norm(eff.reassemble() - eff.full)
    sigma = gibbs_state(h, eff.beta) if sigma is None else sigma
    marg = marginal(h, eff.beta, eff.region, sigma) / h.d ** (h.n_sites - reg.n)
    lhs = opcore.expm(eff.full - eff.log_partition * np.eye(reg.dim))
    expo = opcore.op_norm(lhs - marg) / max(opcore.op_norm(marg), 1e-300)
    return {"support": float(leak), "sum": float(total), "exp": float(expo)}


@dataclass(frozen=True)
class RatePrediction:
    mu_int: float
    admissible: bool
    threshold: float


def mcmi_threshold(kappa: int, growth: int, strength: float) -> float:
    kg = kappa * growth
    return 1.0 / (kg * (1 + kg) * np.e**2 * growth * strength)


def predicted_mcmi_rate(h: LocalHamiltonian, beta: float) -> RatePrediction:
    """Closed-form high-temperature decay rate of the MCMI for marginal-commuting models."""
    if not h.marginal_commuting:
        raise CapabilityError("the decay-rate prediction needs a marginal-commuting model")
    threshold = mcmi_threshold(h.kappa, h.growth, h.strength)
    if beta <= 0:
        return RatePrediction(float("inf"), True, threshold)
    r = max(h.range, 1)
    mu_int = float(np.log(threshold / beta) / r)
    return RatePrediction(mu_int, bool(beta < threshold), float(threshold))
