"""Matrix-valued conditional mutual information and its decay."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import opcore
from .errors import ConfigError, DomainError, SingularityError
from .lattice import Lattice, point_distance
from .models import LocalHamiltonian, effective_hamiltonian, gibbs_state, site_set

FLOOR = 1e-13
# operator norms below this multiple of eps times the size of the summed logs are rounding noise
NOISE_FACTOR = 64


@dataclass(frozen=True)
class Partition4:
    """A, B, C, D partitioning the sites of a register (B is traced out)."""

    A: frozenset
    B: frozenset
    C: frozenset
    D: frozenset

    @classmethod
    def of(cls, sites: Iterable, A, C, D=()) -> "Partition4":
        sites = site_set(sites)
        a, c, d = site_set(A), site_set(C), site_set(D)
        return cls(a, sites - a - c - d, c, d)

    def validate(self, sites: Iterable) -> None:
        parts = [self.A, self.B, self.C, self.D]
        for x, y in itertools.combinations(parts, 2):
            if x & y:
                raise DomainError(f"partition blocks overlap on {sorted(x & y)}")
        if frozenset().union(*parts) != site_set(sites):
            raise DomainError("partition blocks do not cover the register")

    def swapped(self) -> "Partition4":
        return Partition4(self.C, self.B, self.A, self.D)


def region_distance(a: Iterable, c: Iterable, metric: str = "chebyshev") -> int:
    a, c = list(a), list(c)
    if not a or not c:
        raise DomainError("distance needs two non-empty regions")
    return min(point_distance(x, y, metric) for x in a for y in c)


@dataclass(frozen=True)
class McmiReport:
    partition: Partition4
    operator: np.ndarray = field(repr=False)
    norm: float
    cmi: float
    cmi_entropy_form: float
    mutual_information: float
    distance: int | None
    at_noise_floor: bool


def _marginals_diag(p: np.ndarray, d: int, n: int, keeps: Sequence[Sequence[int]]) -> list[np.ndarray]:
    t = p.reshape((d,) * n)
    out = []
    for keep in keeps:
        drop = tuple(i for i in range(n) if i not in keep)
        out.append(t.sum(axis=drop).reshape(-1) if drop else t.reshape(-1))
    return out


def _log_vector(p: np.ndarray, name: str) -> np.ndarray:
    lo = p.min()
    if lo <= opcore.TOL_PD:
        raise SingularityError(f"{name} is not strictly positive (min eigenvalue {lo:.3e})", float(lo))
    return np.log(p)


def _expand(vec: np.ndarray, d: int, n: int, positions: Sequence[int]) -> np.ndarray:
    """Diagonal of embed(diag(vec)) on n sites."""
    shape = [d if i in positions else 1 for i in range(n)]
    return np.broadcast_to(vec.reshape(shape), (d,) * n).reshape(-1)


def mcmi(sigma: np.ndarray, register: opcore.Register, partition: Partition4,
         metric: str = "chebyshev") -> McmiReport:
    """log s_ACD + log s_D - log s_AD - log s_CD on the register of ACD."""
    partition.validate(register.sites)
    d, n = register.d, register.n
    acd = partition.A | partition.C | partition.D
    sub = register.sub(acd)
    pos = lambda region: sub.positions(region)  # noqa: E731
    keep_acd = register.positions(acd)
    regions = {"D": partition.D, "AD": partition.A | partition.D, "CD": partition.C | partition.D}
    diag = np.count_nonzero(sigma - np.diag(np.diag(sigma))) == 0
    if diag:
        p = np.real(np.diag(sigma))
        p_acd = _marginals_diag(p, d, n, [keep_acd])[0]
        margs = dict(zip(regions, _marginals_diag(p_acd, d, sub.n, [pos(r) for r in regions.values()])))
        logs = {"ACD": _log_vector(p_acd, "marginal on ACD")}
        for key, vec in margs.items():
            if key == "D" and not partition.D:
                continue
            logs[key] = _expand(_log_vector(vec, f"marginal on {key}"), d, sub.n, pos(regions[key]))
        hdiag = logs["ACD"] + logs.get("D", 0.0) - logs["AD"] - logs["CD"]
        operator = np.diag(hdiag).astype(complex)
        scale = sum(np.max(np.abs(v)) for v in logs.values())
        norm = float(np.max(np.abs(hdiag)))
        cmi = float(p_acd @ hdiag)
        ent = {k: -float(v @ np.log(v)) for k, v in margs.items()}
        ent["ACD"] = -float(p_acd @ np.log(p_acd))
        ent.setdefault("D", 0.0)
        if not partition.D:
            ent["D"] = 0.0
        p_ac = _marginals_diag(p_acd, d, sub.n, [pos(partition.A | partition.C)])[0]
        p_a = _marginals_diag(p_acd, d, sub.n, [pos(partition.A)])[0]
        p_c = _marginals_diag(p_acd, d, sub.n, [pos(partition.C)])[0]
        ent_ac = -float(p_ac @ np.log(p_ac))
        mi = -float(p_a @ np.log(p_a)) - float(p_c @ np.log(p_c)) - ent_ac
    else:
        s_acd = opcore.partial_trace(sigma, d, n, keep_acd)
        margs = {k: opcore.partial_trace(s_acd, d, sub.n, pos(r)) for k, r in regions.items()}
        logs = {"ACD": opcore.logm(s_acd, name="marginal on ACD")}
        for key, m in margs.items():
            if key == "D" and not partition.D:
                continue
            logs[key] = opcore.embed(opcore.logm(m, name=f"marginal on {key}"), d, sub.n,
                                     pos(regions[key]))
        operator = logs["ACD"] + logs.get("D", 0.0) - logs["AD"] - logs["CD"]
        operator = opcore.hermitize(operator)
        scale = sum(opcore.op_norm(v) for v in logs.values())
        norm = opcore.op_norm(operator)
        cmi = float(np.real(np.trace(s_acd @ operator)))
        ent = {k: opcore.von_neumann_entropy(m) for k, m in margs.items()}
        ent["ACD"] = opcore.von_neumann_entropy(s_acd)
        if not partition.D:
            ent["D"] = 0.0
        s_ac = opcore.partial_trace(s_acd, d, sub.n, pos(partition.A | partition.C))
        s_a = opcore.partial_trace(s_acd, d, sub.n, pos(partition.A))
        s_c = opcore.partial_trace(s_acd, d, sub.n, pos(partition.C))
        mi = (opcore.von_neumann_entropy(s_a) + opcore.von_neumann_entropy(s_c)
              - opcore.von_neumann_entropy(s_ac))
    cmi_ent = -ent["ACD"] - ent["D"] + ent["AD"] + ent["CD"]
    floor = norm <= NOISE_FACTOR * np.finfo(float).eps * max(scale, 1.0)
    if floor:
        norm = 0.0
    dist = (region_distance(partition.A, partition.C, metric)
            if partition.A and partition.C else None)
    return McmiReport(partition, operator, float(norm), cmi, float(cmi_ent), float(mi), dist, bool(floor))


def model_mcmi(h: LocalHamiltonian, beta: float, partition: Partition4,
               sigma: np.ndarray | None = None) -> McmiReport:
    sigma = gibbs_state(h, beta) if sigma is None else sigma
    return mcmi(sigma, h.register, partition, h.lattice.metric)


# -- decay fits --------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    distances: np.ndarray
    values: np.ndarray
    K: float | None
    xi: float | None
    residual: float | None
    status: str  # "ok", "all_zero", "too_few", "flat"
    dropped: tuple[int, ...] = ()
    n_sites: int = 1


def fit_decay(distances: Sequence[float], values: Sequence[float], n_sites: int,
              weights: Sequence[float] | None = None) -> DecayFit:
    """Least squares fit of log H = log(K n) - dist/xi over the strictly positive points."""
    dist = np.asarray(distances, dtype=float)
    vals = np.asarray(values, dtype=float)
    keep = vals > FLOOR
    dropped = tuple(int(i) for i in np.flatnonzero(~keep))
    base = dict(distances=dist, values=vals, dropped=dropped, n_sites=n_sites)
    if not np.any(keep):
        return DecayFit(K=None, xi=None, residual=None, status="all_zero", **base)
    if np.count_nonzero(keep) < 3:
        return DecayFit(K=None, xi=None, residual=None, status="too_few", **base)
    x, y = dist[keep], np.log(vals[keep])
    w = None if weights is None else np.sqrt(np.asarray(weights, dtype=float)[keep])
    slope, intercept = np.polyfit(x, y, 1, w=w)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    if slope >= 0 or np.allclose(y, y[0], rtol=0, atol=1e-12):
        return DecayFit(K=float(np.exp(intercept) / n_sites), xi=float("inf"), residual=resid,
                        status="flat", **base)
    return DecayFit(K=float(np.exp(intercept) / n_sites), xi=float(-1.0 / slope), residual=resid,
                    status="ok", **base)


@dataclass(frozen=True)
class ScanRow:
    distance: int
    norm: float
    cmi: float
    mutual_information: float
    bound: float | None = None


def decay_scan(h: LocalHamiltonian, beta: float, family: Sequence[Partition4],
               sigma: np.ndarray | None = None) -> tuple[DecayFit, list[ScanRow]]:
    """MCMI norms over a family ordered by dist(A, C), with the exponential fit."""
    sigma = gibbs_state(h, beta) if sigma is None else sigma
    rows = []
    for p in family:
        rep = mcmi(sigma, h.register, p, h.lattice.metric)
        if rep.distance is None:
            raise DomainError("decay scans need non-empty A and C")
        rows.append(ScanRow(rep.distance, rep.norm, rep.cmi, rep.mutual_information))
    dists = [r.distance for r in rows]
    if dists != sorted(dists):
        raise ConfigError("partition family must be sorted by increasing dist(A, C)")
    fit = fit_decay(dists, [r.norm for r in rows], h.n_sites)
    return fit, rows


def chain_family(sites: Sequence, start: int = 0, condition_beyond: bool = True) -> list[Partition4]:
    """A = one site, C = a site further along, B in between, D the sites beyond C (optional)."""
    sites = list(sites)
    out = []
    for j in range(start + 1, len(sites)):
        a, c = {sites[start]}, {sites[j]}
        d = set(sites[j + 1:]) if condition_beyond else set()
        out.append(Partition4.of(sites, a, c, d))
    return out


# -- classical cross-check ---------------------------------------------------

@dataclass(frozen=True)
class ClassicalMcmi:
    value: float
    chained_bound: float


def _configurations(n: int, d: int) -> np.ndarray:
    return np.array(list(itertools.product(range(d), repeat=n)), dtype=np.int64)


def _log_conditional_gap(probs: dict, positions: dict, A, C, D) -> float:
    """sup over configurations of |log p(x_A | x_C x_D) - log p(x_A | x_D)|."""
    def marginal(block):
        idx = sorted(positions[s] for s in block)
        out: dict = {}
        for cfg, p in probs.items():
            key = tuple(cfg[i] for i in idx)
            out[key] = out.get(key, 0.0) + p
        return idx, out

    acd_idx, p_acd = marginal(A | C | D)
    cd_idx, p_cd = marginal(C | D)
    ad_idx, p_ad = marginal(A | D)
    d_idx, p_d = marginal(D)
    worst = 0.0
    for cfg_acd, p in p_acd.items():
        if p <= 0:
            raise SingularityError("zero conditional probability", 0.0)
        full = dict(zip(acd_idx, cfg_acd))
        cd = p_cd[tuple(full[i] for i in cd_idx)]
        ad = p_ad[tuple(full[i] for i in ad_idx)]
        dd = p_d[tuple(full[i] for i in d_idx)] if d_idx else 1.0
        worst = max(worst, abs(np.log(p / cd) - np.log(ad / dd)))
    return float(worst)


def classical_mcmi(h: LocalHamiltonian, beta: float, partition: Partition4) -> ClassicalMcmi:
    """Sup-norm of the log ratio of conditionals, by explicit enumeration of configurations.

    Boundary conditions are open: the model is the whole system.
    """
    if not h.is_diagonal:
        raise ConfigError("classical MCMI needs a diagonal model")
    partition.validate(h.sites)
    n, d = h.n_sites, h.d
    configs = _configurations(n, d)
    energies = np.zeros(len(configs))
    for t in h.terms:
        idx = [h.sites.index(s) for s in t.support]
        local = np.real(np.diag(t.matrix))
        flat = np.zeros(len(configs), dtype=np.int64)
        for i in idx:
            flat = flat * d + configs[:, i]
        energies += local[flat]
    weights = np.exp(-beta * (energies - energies.min()))
    weights /= weights.sum()
    probs = {tuple(cfg): w for cfg, w in zip(configs.tolist(), weights)}
    positions = {s: i for i, s in enumerate(h.sites)}
    A, C, D = partition.A, partition.C, partition.D
    value = _log_conditional_gap(probs, positions, A, C, D)
    chained, seen = 0.0, set()
    for c in sorted(C):
        chained += _log_conditional_gap(probs, positions, A, frozenset({c}), D | frozenset(seen))
        seen.add(c)
    return ClassicalMcmi(value, float(chained))


# -- locality bound from effective Hamiltonians ------------------------------

@dataclass(frozen=True)
class LocalityCheck:
    norm: float
    delta: float
    mu_int: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.norm <= self.bound + 1e-8


def locality_bound(h: LocalHamiltonian, beta: float, partition: Partition4, mu_int: float,
                   sigma: np.ndarray | None = None) -> LocalityCheck:
    """||H(A:C|D)|| against 4 min(|A|,|C|) Delta exp(-mu_int dist(A, C)).

    Delta is the largest interaction norm of the four effective Hamiltonians
    entering the MCMI (regions ACD, D, AD and CD).
    """
    sigma = gibbs_state(h, beta) if sigma is None else sigma
    rep = mcmi(sigma, h.register, partition, h.lattice.metric)
    regions = [partition.A | partition.C | partition.D, partition.D,
               partition.A | partition.D, partition.C | partition.D]
    delta = 0.0
    for region in regions:
        if region:
            eff = effective_hamiltonian(h, beta, region, sigma)
            delta = max(delta, eff.interaction_norm(mu_int))
    bound = 4 * min(len(partition.A), len(partition.C)) * delta * np.exp(-mu_int * rep.distance)
    return LocalityCheck(rep.norm, float(delta), float(mu_int), float(bound))
