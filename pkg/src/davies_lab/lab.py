"""Numerical checks of the entropy inequalities and closed-form bound calculators.

Every ``check_*`` function evaluates both sides of one inequality on a concrete
state and returns an immutable :class:`InequalityVerdict`.  The expensive
ingredients (Gibbs state, conditional expectations, MCMI norms) are gathered in
``prepare_*`` setups so that randomized sweeps can reuse them.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import opcore
from .davies import (ConditionalExpectation, DaviesGenerator, _gamma_quarter, build_davies,
                     conditional_expectation, entropy_production, neighbourhood, symmetrized)
from .errors import CapabilityError, ConfigError, DomainError
from .lattice import CoarseGraining
from .mcmi import DecayFit, Partition4, mcmi
from .models import LocalHamiltonian, gibbs_state, site_set
from .w1 import first_crossing, w1_distance

SLACK_TOL = 1e-7
# points of an entropy trajectory may rise by at most this much before the data are rejected
MONOTONE_TOL = 1e-9
ENVELOPE_TOL = 1e-9
# relative entropies below this are treated as converged when fitting envelopes
FIT_FLOOR = 1e-10


# -- verdicts ----------------------------------------------------------------

def inputs_digest(*items) -> str:
    """sha256 over arrays (bytes + shape) and scalars/strings (repr)."""
    h = hashlib.sha256()
    for item in items:
        if isinstance(item, np.ndarray):
            arr = np.ascontiguousarray(item)
            h.update(str(arr.shape).encode())
            h.update(arr.astype(complex).tobytes())
        else:
            h.update(repr(item).encode())
        h.update(b"|")
    return h.hexdigest()


@dataclass(frozen=True)
class InequalityVerdict:
    inequality: str
    left: float
    right: float
    digest: str
    extras: tuple[tuple[str, float], ...] = ()
    sub: tuple["InequalityVerdict", ...] = ()

    @property
    def slack(self) -> float:
        return self.right - self.left

    @property
    def passed(self) -> bool:
        return bool(self.slack >= -SLACK_TOL)

    @property
    def all_passed(self) -> bool:
        return self.passed and all(v.all_passed for v in self.sub)

    def extra(self, key: str) -> float:
        return dict(self.extras)[key]

    def row(self) -> dict:
        return {"inequality": self.inequality, "left": self.left, "right": self.right,
                "slack": self.slack, "pass": self.passed, "digest": self.digest}


def _verdict(name: str, left: float, right: float, digest: str, extras=None, sub=()) -> InequalityVerdict:
    extras = tuple(sorted((k, float(v)) for k, v in (extras or {}).items()))
    return InequalityVerdict(name, float(left), float(right), digest, extras, tuple(sub))


def random_states(dim: int, count: int, seed: int, mix: float = 0.1) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [opcore.random_density(dim, rng, mix) for _ in range(count)]


def sweep(check: Callable[[np.ndarray], InequalityVerdict], states: Sequence[np.ndarray],
          jobs: int = 1) -> list[InequalityVerdict]:
    """Run ``check`` on every state; results sorted by digest so the order is job-independent.

    With ``jobs > 1`` the check must be picklable (a module-level function or a partial).
    """
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(check, states, chunksize=max(1, len(states) // (4 * jobs))))
    else:
        out = [check(s) for s in states]
    return sorted(out, key=lambda v: v.digest)


def product_reference(sigma: np.ndarray, d: int, n: int) -> np.ndarray:
    """Tensor product of the single-site marginals (a non-Gibbs negative control)."""
    out = np.ones((1, 1), dtype=complex)
    for k in range(n):
        out = np.kron(out, opcore.partial_trace(sigma, d, n, [k]))
    return out


# -- weak entropy factorization ----------------------------------------------

def check_weak_entropy_factorization(rho: np.ndarray, sigma: np.ndarray, register: opcore.Register,
                                     p: Partition4) -> InequalityVerdict:
    """D_ABC <= D_AB + D_BC + ||H(A:C|D)||, plus the multiplicative form for commuting diagonals."""
    p.validate(register.sites)
    d, n = register.d, register.n
    pos = register.positions
    cond = lambda region: opcore.conditional_relative_entropy(rho, sigma, d, n, pos(region))  # noqa: E731
    d_abc = cond(p.A | p.B | p.C)
    d_ab, d_bc = cond(p.A | p.B), cond(p.B | p.C)
    rep = mcmi(sigma, register, p)
    digest = inputs_digest("wef", rho, sigma, sorted(p.A), sorted(p.B), sorted(p.C), sorted(p.D))
    extras = {"D_ABC": d_abc, "D_AB": d_ab, "D_BC": d_bc, "mcmi_norm": rep.norm}
    sub = []
    diagonal = all(np.count_nonzero(x - np.diag(np.diag(x))) == 0 for x in (rho, sigma))
    if diagonal:
        factor = 1.0 - float(np.max(np.abs(np.exp(np.real(np.diag(rep.operator))) - 1.0)))
        sub.append(_verdict("entropy_factorization_classical", factor * d_abc, d_ab + d_bc,
                            digest, {"factor": factor}))
    return _verdict("weak_entropy_factorization", d_abc, d_ab + d_bc + rep.norm, digest, extras, sub)


# -- weak approximate tensorization ------------------------------------------

@dataclass(frozen=True, eq=False)
class WeakAtSetup:
    model: LocalHamiltonian
    beta: float
    cg: CoarseGraining
    sigma: np.ndarray = field(repr=False)
    cells: tuple[tuple[int, int, tuple], ...]  # (level, index, physical sites)
    expectations: tuple[ConditionalExpectation, ...] = field(repr=False)
    zetas: tuple[float, ...]

    @property
    def c2(self) -> float:
        return float(sum(self.zetas))

    @property
    def cover(self) -> list[tuple]:
        return [c[2] for c in self.cells]


def _physical(region, h: LocalHamiltonian) -> tuple:
    inside = site_set(region)
    return tuple(s for s in h.sites if s in inside)


def prepare_weak_at(h: LocalHamiltonian, beta: float, cg: CoarseGraining,
                    sigma: np.ndarray | None = None) -> WeakAtSetup:
    """Conditional expectations of the cells and the MCMI norms zeta_a of every level.

    Cells are intersected with the model sites (the coarse-graining may live on a
    padded lattice).  ``sigma`` overrides the reference state; the conditional
    expectations always come from the Davies generators of ``h``.
    """
    sigma = gibbs_state(h, beta) if sigma is None else sigma
    cells, exps = [], []
    for cell in cg.cells():
        sites = _physical(cell.core, h)
        if not sites:
            continue
        gen = build_davies(h, sites, beta)
        cells.append((cell.level, cell.index, sites))
        exps.append(conditional_expectation(gen))
    zetas = []
    for level in range(1, cg.D + 1):
        w, x, _, z = (site_set(_physical(r, h)) for r in cg.partition(level))
        if not x or not z:
            zetas.append(0.0)
            continue
        p = Partition4.of(h.sites, x, z, w)
        zetas.append(mcmi(sigma, h.register, p, h.lattice.metric).norm)
    return WeakAtSetup(h, float(beta), cg, sigma, tuple(cells), tuple(exps), tuple(zetas))


def check_weak_at(h: LocalHamiltonian, beta: float, cg: CoarseGraining, rho: np.ndarray,
                  fit: DecayFit | None = None, setup: WeakAtSetup | None = None) -> InequalityVerdict:
    """D(rho||sigma) <= sum over cells of D(rho||E_C(rho)) + sum_a zeta_a."""
    setup = setup or prepare_weak_at(h, beta, cg)
    reg = h.register
    local = [opcore.relative_entropy(rho, e.apply(rho, reg)) for e in setup.expectations]
    left = opcore.relative_entropy(rho, setup.sigma)
    total = float(sum(local))
    digest = inputs_digest("wat", rho, setup.sigma, beta, cg.k, cg.c, cg.ell, h.digest)
    extras = {"local_sum": total, "c2": setup.c2}
    extras.update({f"zeta_{a + 1}": z for a, z in enumerate(setup.zetas)})
    sub = []
    if fit is not None and fit.K is not None and np.isfinite(fit.xi):
        err = weak_at_error(cg.D, fit.K, h.n_sites, cg.c, fit.xi)
        sub.append(_verdict("weak_at_explicit", left, total + err, digest, {"error": err}))
    return _verdict("weak_at", left, total + setup.c2, digest, extras, sub)


# -- weak transport cost -----------------------------------------------------

def check_weak_tc(h: LocalHamiltonian, beta: float, cover: Sequence, rho: np.ndarray, c2: float,
                  sigma: np.ndarray | None = None, w1_method: str = "bounds") -> InequalityVerdict:
    """W1(rho, sigma) <= max_i 2 sqrt(2) |A_i d| sqrt(n_A D(rho||sigma)) + |Lambda| sqrt(2 c2).

    The left side is the certified W1 upper bound.  ``c2`` must be the additive
    error of an approximate tensorization over the same cover.
    """
    sigma = gibbs_state(h, beta) if sigma is None else sigma
    cover = [tuple(_physical(a, h)) for a in cover]
    if not cover or set().union(*map(set, cover)) != set(h.sites):
        raise DomainError("the cover must be non-empty and cover every site")
    n_a = len(cover)
    closure = max(len(neighbourhood(h, a)) for a in cover)
    rel = opcore.relative_entropy(rho, sigma)
    w1 = w1_distance(rho, sigma, h.d, h.n_sites, w1_method)
    display = 2 * math.sqrt(2) * closure * math.sqrt(n_a * rel)
    prose = 2 * math.sqrt(2 * n_a) * closure * math.sqrt(rel)
    b2 = h.n_sites * math.sqrt(2 * c2)
    digest = inputs_digest("wtc", rho, sigma, beta, c2, h.digest, [sorted(a) for a in cover])
    return _verdict("weak_tc", w1.upper, display + b2, digest,
                    {"w1_lower": w1.lower, "b1_display_term": display, "b1_prose_term": prose,
                     "b2": b2, "relative_entropy": rel})


# -- MLSI-alike inequality for local Davies generators -----------------------

@dataclass(frozen=True, eq=False)
class MlsiSetup:
    model: LocalHamiltonian
    beta: float
    region: tuple
    sigma: np.ndarray = field(repr=False)
    expectation: ConditionalExpectation = field(repr=False)
    expectation0: ConditionalExpectation = field(repr=False)
    outer: DaviesGenerator = field(repr=False)
    outer0: DaviesGenerator = field(repr=False)
    inner: DaviesGenerator = field(repr=False)
    inner0: DaviesGenerator = field(repr=False)
    closure: int
    closure2: int
    chi0_min: float

    @property
    def constant(self) -> float:
        g, j = self.model.growth, self.model.strength
        return mlsi_alike_constant(g, j, self.beta, self.closure2, self.chi0_min)


def prepare_mlsi_alike(h: LocalHamiltonian, beta: float, region,
                       sigma: np.ndarray | None = None) -> MlsiSetup:
    sigma = gibbs_state(h, beta) if sigma is None else sigma
    sites = _physical(region, h)
    inner = build_davies(h, sites, beta)
    inner0 = build_davies(h, sites, 0.0)
    grown = neighbourhood(h, sites)
    outer = build_davies(h, grown, beta)
    outer0 = build_davies(h, grown, 0.0)
    return MlsiSetup(h, float(beta), sites, sigma, conditional_expectation(inner),
                     conditional_expectation(inner0), outer, outer0, inner, inner0,
                     len(grown), len(neighbourhood(h, grown)), outer0.chi0_min)


def check_mlsi_alike(h: LocalHamiltonian, beta: float, region, rho: np.ndarray,
                     setup: MlsiSetup | None = None) -> InequalityVerdict:
    """D(rho||E_A rho) <= exp(2gJ(1 + 2 beta |A dd|)) / chi0_min * EP of the generator on A d.

    Sub-verdicts compare finite and infinite temperature quantities and the
    infinite temperature inequality itself.
    """
    s = setup or prepare_mlsi_alike(h, beta, region)
    reg = h.register
    g, j = h.growth, h.strength
    flat = np.eye(reg.dim) / reg.dim
    left = opcore.relative_entropy(rho, s.expectation.apply(rho, reg))
    left0 = opcore.relative_entropy(rho, s.expectation0.apply(rho, reg))
    ep_outer = entropy_production(s.outer, rho, s.sigma, reg)
    ep_outer0 = entropy_production(s.outer0, rho, flat, reg)
    ep_inner = entropy_production(s.inner, rho, s.sigma, reg)
    ep_inner0 = entropy_production(s.inner0, rho, flat, reg)
    digest = inputs_digest("mlsi", rho, s.sigma, beta, s.region, h.digest)
    c_rel = math.exp(2 * g * j * beta * s.closure)
    c_ep = math.exp(2 * g * j * (beta * s.closure + 1))
    sub = (
        _verdict("expectation_temperature_comparison", left, c_rel * left0, digest),
        _verdict("entropy_production_temperature_comparison", ep_inner0, c_ep * ep_inner, digest),
        _verdict("mlsi_alike_infinite_temperature", s.chi0_min * left0, ep_outer0, digest),
    )
    return _verdict("mlsi_alike", left, s.constant * ep_outer, digest,
                    {"constant": s.constant, "entropy_production": ep_outer}, sub)


# -- dynamics: empirical envelopes and mixing times --------------------------

def _eigen_propagator(gen: DaviesGenerator):
    """t -> exp(t L) as a dense matrix, diagonalizing once."""
    g, gi = _gamma_quarter(gen.local_gibbs)
    w, v = np.linalg.eigh(symmetrized(gen))
    left, right = g @ v, v.conj().T @ gi

    def prop(t: float) -> np.ndarray:
        return (left * np.exp(t * w)) @ right

    return prop


def _whole(gen: DaviesGenerator) -> None:
    if gen.sites != gen.model.sites:
        raise CapabilityError("this protocol needs the generator of the whole system")


@dataclass(frozen=True)
class EnvelopeFit:
    alpha: float
    c2: float
    worst_state: int
    excluded: tuple[int, ...]
    max_violation: float


def empirical_wmlsi(gen: DaviesGenerator, states: Sequence[np.ndarray], times: Sequence[float]
                    ) -> EnvelopeFit:
    """Fit D(rho_t||sigma) <= exp(-alpha t) D(rho_0||sigma) + c2 over the given states.

    alpha is the smallest average decay rate seen above ``FIT_FLOOR``; points at or
    below the floor are absorbed into c2.  States starting at the fixed point are
    excluded.  The envelope is re-checked at every point afterwards.
    """
    _whole(gen)
    times = np.asarray(times, dtype=float)
    if np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise ConfigError("envelope times must be positive and increasing")
    sigma = gen.global_gibbs
    prop = _eigen_propagator(gen)
    props = [prop(t) for t in times]
    curves, excluded = {}, []
    for idx, rho in enumerate(states):
        d0 = opcore.relative_entropy(rho, sigma)
        if d0 <= FIT_FLOOR:
            excluded.append(idx)
            continue
        vals = []
        for p in props:
            rt = opcore.hermitize((p @ rho.reshape(-1)).reshape(rho.shape))
            vals.append(opcore.relative_entropy(rt, sigma))
        vals = np.array(vals)
        rise = np.diff(np.concatenate([[d0], vals]))
        if np.any(rise > MONOTONE_TOL):
            raise DomainError(f"relative entropy of state {idx} increases by {rise.max():.3e}")
        curves[idx] = (d0, vals)
    if not curves:
        raise DomainError("no state away from the fixed point")
    alpha, worst, c2 = math.inf, -1, 0.0
    for idx, (d0, vals) in curves.items():
        above = vals > FIT_FLOOR
        if np.any(~above):
            c2 = max(c2, float(vals[~above].max()))
        if np.any(above):
            rates = -np.log(vals[above] / d0) / times[above]
            if rates.min() < alpha:
                alpha, worst = float(rates.min()), idx
    if not np.isfinite(alpha):
        alpha, worst = float("inf"), next(iter(curves))
    viol = -math.inf
    for d0, vals in curves.values():
        env = np.exp(-alpha * times) * d0 + c2 if np.isfinite(alpha) else np.full_like(vals, c2)
        viol = max(viol, float(np.max(vals - env)))
    if viol > ENVELOPE_TOL:
        raise DomainError(f"fitted envelope violated by {viol:.3e}")
    return EnvelopeFit(alpha, c2, worst, tuple(excluded), viol)


def trace_mixing_time(gen: DaviesGenerator, states: Sequence[np.ndarray], eps: float,
                      horizon: float = 1e4, rel_tol: float = 1e-9) -> float:
    """Lower-bound protocol: max over the states of the first t with ||e^{tL} rho - sigma||_1 <= eps."""
    _whole(gen)
    if eps <= 0:
        raise ConfigError("eps must be positive")
    if eps >= 2:
        return 0.0
    sigma = gen.global_gibbs
    prop = _eigen_propagator(gen)
    worst = 0.0
    for rho in states:
        def dist(t, rho=rho):
            rt = rho if t == 0 else (prop(t) @ rho.reshape(-1)).reshape(rho.shape)
            return opcore.trace_norm(opcore.hermitize(rt) - sigma)
        worst = max(worst, first_crossing(dist, eps, horizon, rel_tol=rel_tol))
    return worst


# -- closed-form bounds ------------------------------------------------------

SYMBOLS = ("K", "xi", "g", "J", "beta", "D", "N", "L", "eps", "chi0", "C", "mu_gap", "d", "r",
           "c", "n_A", "closure", "closure2", "size", "c2")


@dataclass(frozen=True)
class BoundReport:
    formula: str
    expression: str
    inputs: tuple[tuple[str, float], ...]
    value: float
    gate: bool | None = None
    gate_threshold: float | None = None

    def as_dict(self) -> dict:
        return {"formula": self.formula, "expression": self.expression, "inputs": dict(self.inputs),
                "value": self.value, "gate": self.gate, "gate_threshold": self.gate_threshold}


def _log_scale(D, K, N, eps):
    return math.log(K * D * 2**D * N / eps)


def weak_at_error(D, K, N, c, xi) -> float:
    return D * 2**D * K * N * math.exp(-c / xi)


def mlsi_alike_constant(g, J, beta, closure2, chi0) -> float:
    return math.exp(2 * g * J * (1 + 2 * beta * closure2)) / chi0


def weak_mlsi_inverse_rate(D, chi0, g, J, beta, r, xi, K, N, eps) -> float:
    ell = 2 * D * (2 * r + xi * _log_scale(D, K, N, eps)) + 1
    return (D + 1) / chi0 * math.exp(2 * g * J) * math.exp(4 * beta * g * J * ell**D)


def weak_mlsi_gate(D, K, L, r, xi) -> float:
    return math.exp(math.log(K * D * 2**D) + D * math.log(2 * L + 1) + 2 * r / xi - L / (D * xi))


def gap_weak_mlsi_inverse_rate(D, C, beta, g, J, d, r, xi, K, N, eps, mu_gap) -> float:
    ell = 2 * D * (r + xi * _log_scale(D, K, N, eps))
    return (D + 1) / C * (5 + 4 * beta * g * J + 8 * math.log(d)) * ell ** (D * (1 + mu_gap))


def gap_weak_mlsi_gate(D, K, L, r, xi) -> float:
    return math.exp(math.log(K * D * 2**D) + D * math.log(2 * L + 1) + r / xi - L / (D * xi))


def gap_to_mlsi(C, beta, g, J, d, closure, size, mu_gap) -> float:
    return C / (2 * math.log(10) + 2 * (2 * beta * g * J + 3 * math.log(d)) * closure) * size ** (-mu_gap)


def _inner_side(D, r, xi, K, N, eps) -> float:
    return 2 * D * (r + xi * math.log(8 * D * 2**D * K * N / eps**2)) + 1


def w1_mixing_time_bound(D, chi0, g, J, beta, r, xi, K, N, eps, d) -> float:
    side = _inner_side(D, r, xi, K, N, eps)
    scale = 64 * K * D * (D + 1) * 2**D / eps**2 * side ** (2 * D)
    ell = 2 * D * (2 * r + xi * math.log(scale)) + 1
    prefactor = (D + 1) * math.exp(2 * g * J) / chi0 * math.exp(4 * beta * g * J * ell**D)
    return prefactor * math.log(64 * (2 * beta * g * J + math.log(d)) * (D + 1) / eps**2
                                * side ** (2 * D))


def w1_mixing_gate(D, K, N, r, xi, shift=1.0) -> float:
    """Smallest admissible eps; ``shift`` is r/xi's coefficient in the exponent (1 or 1/2)."""
    # one exponential so that tiny thresholds keep full relative precision
    return math.exp(math.log(8 * N) + 0.5 * math.log((D + 1) * K * D * 2**D)
                    + shift * r / xi - (N ** (1 / D) - 1) / (4 * D * xi))


def trace_mixing_time_bound(D, C, beta, g, J, d, r, xi, K, N, eps, mu_gap) -> float:
    ell = 2 * D * (r + xi * math.log(2 * K * D * 2**D * N / eps**2))
    return ((D + 1) / C * (5 + 4 * beta * g * J + 8 * math.log(d)) * ell ** (D * (1 + mu_gap))
            * math.log(4 * (2 * beta * g * J + math.log(d)) * N / eps**2))


def trace_mixing_gate(D, K, N, r, xi) -> float:
    return math.exp(0.5 * math.log(2 * K * D * 2**D * N) + r / (2 * xi)
                    - (N ** (1 / D) - 1) / (4 * D * xi))


def gap_w1_mixing_time_bound(D, C, beta, g, J, d, r, xi, K, N, eps, mu_gap) -> float:
    side = _inner_side(D, r, xi, K, N, eps)
    ell = 2 * D * (r + xi * math.log(64 * K * D * 2**D / eps**2 * side ** (2 * D))) + 1
    return ((D + 1) / C * (5 + 4 * beta * g * J + 8 * math.log(d)) * ell ** (D * (1 + mu_gap))
            * math.log(64 * (2 * beta * g * J + math.log(d)) / eps**2 * side ** (2 * D)))


def tc_constants(n_A, closure, N, c2) -> tuple[float, float, float]:
    """(b1 from the product form, b1 from the square-root form, b2); the two b1 agree."""
    return (2 * math.sqrt(2) * closure * math.sqrt(n_A), 2 * math.sqrt(2 * n_A) * closure,
            N * math.sqrt(2 * c2))


@dataclass(frozen=True)
class Formula:
    name: str
    expression: str
    symbols: tuple[str, ...]
    value: Callable[..., float]
    gate_symbols: tuple[str, ...] = ()
    gate: Callable[..., float] | None = None


FORMULAS: dict[str, Formula] = {f.name: f for f in [
    Formula("weak_at_error", "D 2^D K N exp(-c/xi)", ("D", "K", "N", "c", "xi"), weak_at_error),
    Formula("mlsi_alike_constant", "exp(2gJ(1 + 2 beta |A dd|)) / chi0",
            ("g", "J", "beta", "closure2", "chi0"), mlsi_alike_constant),
    Formula("weak_mlsi_inverse_rate",
            "(D+1)/chi0 exp(2gJ) exp(4 beta g J (2D(2r + xi log(K D 2^D N/eps)) + 1)^D)",
            ("D", "chi0", "g", "J", "beta", "r", "xi", "K", "N", "eps"), weak_mlsi_inverse_rate,
            ("D", "K", "L", "r", "xi"), weak_mlsi_gate),
    Formula("gap_weak_mlsi_inverse_rate",
            "(D+1)/C (5 + 4 beta g J + 8 log d) (2D(r + xi log(K D 2^D N/eps)))^(D(1+mu_gap))",
            ("D", "C", "beta", "g", "J", "d", "r", "xi", "K", "N", "eps", "mu_gap"),
            gap_weak_mlsi_inverse_rate, ("D", "K", "L", "r", "xi"), gap_weak_mlsi_gate),
    Formula("gap_to_mlsi", "C |A|^(-mu_gap) / (2 log 10 + 2(2 beta g J + 3 log d)|A d|)",
            ("C", "beta", "g", "J", "d", "closure", "size", "mu_gap"), gap_to_mlsi),
    Formula("w1_mixing_time",
            "(D+1) e^(2gJ)/chi0 exp(4 beta g J [2D(2r + xi log(64 K D (D+1) 2^D/eps^2 S^(2D))) + 1]^D)"
            " log(64 (2 beta g J + log d)(D+1)/eps^2 S^(2D)), S = 2D(r + xi log(8 D 2^D K N/eps^2)) + 1",
            ("D", "chi0", "g", "J", "beta", "r", "xi", "K", "N", "eps", "d"), w1_mixing_time_bound,
            ("D", "K", "N", "r", "xi"), w1_mixing_gate),
    Formula("trace_mixing_time",
            "(D+1)/C (5 + 4 beta g J + 8 log d)(2D(r + xi log(2 K D 2^D N/eps^2)))^(D(1+mu_gap))"
            " log(4(2 beta g J + log d) N/eps^2)",
            ("D", "C", "beta", "g", "J", "d", "r", "xi", "K", "N", "eps", "mu_gap"),
            trace_mixing_time_bound, ("D", "K", "N", "r", "xi"), trace_mixing_gate),
    Formula("gap_w1_mixing_time",
            "(D+1)/C (5 + 4 beta g J + 8 log d)(2D(r + xi log(64 K D 2^D/eps^2 S^(2D))) + 1)^(D(1+mu_gap))"
            " log(64(2 beta g J + log d)/eps^2 S^(2D)), S = 2D(r + xi log(8 D 2^D K N/eps^2)) + 1",
            ("D", "C", "beta", "g", "J", "d", "r", "xi", "K", "N", "eps", "mu_gap"),
            gap_w1_mixing_time_bound, ("D", "K", "N", "r", "xi"),
            lambda D, K, N, r, xi: w1_mixing_gate(D, K, N, r, xi, shift=0.5)),
    Formula("tc_b1", "2 sqrt(2) max_i |A_i d| sqrt(n_A)", ("n_A", "closure"),
            lambda n_A, closure: tc_constants(n_A, closure, 0, 0)[0]),
    Formula("tc_b1_root_form", "2 sqrt(2 n_A) max_i |A_i d|", ("n_A", "closure"),
            lambda n_A, closure: tc_constants(n_A, closure, 0, 0)[1]),
    Formula("tc_b2", "N sqrt(2 c2)", ("N", "c2"), lambda N, c2: N * math.sqrt(2 * c2)),
]}


def _take(inputs: Mapping[str, float], names: Iterable[str], formula: str) -> dict:
    out = {}
    for name in names:
        if name not in inputs or inputs[name] is None:
            raise ConfigError(f"formula {formula!r} needs symbol {name!r}")
        out[name] = inputs[name]
    return out


def evaluate_bound(name: str, inputs: Mapping[str, float]) -> BoundReport:
    if name not in FORMULAS:
        raise ConfigError(f"unknown formula {name!r}; known: {sorted(FORMULAS)}")
    f = FORMULAS[name]
    args = _take(inputs, f.symbols, name)
    gate = threshold = None
    used = dict(args)
    try:
        value = float(f.value(**args))
        if f.gate is not None:
            gargs = _take(inputs, f.gate_symbols, name)
            eps = _take(inputs, ["eps"], name)["eps"]
            threshold = float(f.gate(**gargs))
            gate = bool(eps >= threshold)
            used.update(gargs)
    except ArithmeticError as exc:
        raise DomainError(f"formula {name!r} overflows for these inputs ({exc})") from None
    if not math.isfinite(value):
        raise DomainError(f"formula {name!r} is not finite for these inputs")
    return BoundReport(name, f.expression, tuple(sorted(used.items())), value, gate, threshold)


def bound_calculators(inputs: Mapping[str, float], formulas: Sequence[str] | None = None
                      ) -> list[BoundReport]:
    """Evaluate the named formulas (default: all) on one set of symbols."""
    unknown = set(inputs) - set(SYMBOLS)
    if unknown:
        raise ConfigError(f"unknown symbols {sorted(unknown)}")
    names = list(FORMULAS) if formulas is None else list(formulas)
    return [evaluate_bound(n, inputs) for n in names]


def polylog_table(N_values: Sequence[float], eps: float, base: Mapping[str, float]) -> list[dict]:
    """Trace mixing bound against (log(N/eps^2))^(1 + D(1+mu_gap)) for growing N."""
    rows = []
    for N in N_values:
        rep = evaluate_bound("trace_mixing_time", {**base, "N": N, "eps": eps})
        scale = math.log(N / eps**2) ** (1 + base["D"] * (1 + base["mu_gap"]))
        rows.append({"N": N, "bound": rep.value, "polylog": scale, "ratio": rep.value / scale})
    return rows
