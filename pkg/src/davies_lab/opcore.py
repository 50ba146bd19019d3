"""Dense operator algebra on registers of qudits.

Operators are plain complex numpy arrays of shape ``(d**n, d**n)``. Tensor
factor ``i`` of the array is the ``i``-th site of the register, in register
order. Superoperators act on the row-major vectorization
``vec(X)[i * dim + j] = X[i, j]``, so ``vec(A X B) = kron(A, B.T) vec(X)``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, SingularityError

TOL_HERM = 1e-10
TOL_TRACE = 1e-10
TOL_PSD = 1e-10
TOL_PD = 1e-12
TOL_ENTROPY = 1e-9


@dataclass(frozen=True)
class Register:
    """Ordered list of sites, each carrying a ``d``-dimensional qudit."""

    sites: tuple
    d: int = 2

    def __post_init__(self):
        if len(set(self.sites)) != len(self.sites):
            raise DomainError("register sites must be distinct")

    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def dim(self) -> int:
        return self.d**self.n

    def positions(self, sites: Iterable) -> list[int]:
        """Register positions of ``sites``, sorted in register order."""
        lookup = {s: i for i, s in enumerate(self.sites)}
        try:
            return sorted(lookup[s] for s in set(sites))
        except KeyError as exc:
            raise DomainError(f"site {exc.args[0]} is not in the register") from None

    def sub(self, sites: Iterable) -> "Register":
        pos = self.positions(sites)
        return Register(tuple(self.sites[i] for i in pos), self.d)

    def complement(self, sites: Iterable) -> list:
        drop = set(sites)
        return [s for s in self.sites if s not in drop]


def hermitize(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + x.conj().T)


def is_hermitian(x: np.ndarray, tol: float = TOL_HERM) -> bool:
    return bool(np.max(np.abs(x - x.conj().T), initial=0.0) <= tol)


def check_density(rho: np.ndarray, tol: float = TOL_PSD) -> None:
    if not is_hermitian(rho):
        raise DomainError("density operator is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > TOL_TRACE:
        raise DomainError(f"density operator has trace {np.trace(rho).real!r}")
    lo = np.linalg.eigvalsh(hermitize(rho))[0]
    if lo < -tol:
        raise DomainError(f"density operator has negative eigenvalue {lo!r}")


# -- tensor bookkeeping ------------------------------------------------------

def _check_positions(positions: Sequence[int], n: int) -> list[int]:
    pos = list(positions)
    if len(set(pos)) != len(pos) or any(p < 0 or p >= n for p in pos):
        raise DomainError(f"invalid positions {pos} for {n} sites")
    return pos


def partial_trace(x: np.ndarray, d: int, n: int, keep: Sequence[int]) -> np.ndarray:
    """Trace out every site not in ``keep``; the result keeps register order."""
    keep = sorted(_check_positions(keep, n))
    if len(keep) == n:
        return x
    drop = [i for i in range(n) if i not in keep]
    t = x.reshape((d,) * (2 * n))
    perm = keep + drop + [n + i for i in keep] + [n + i for i in drop]
    dk, dd = d ** len(keep), d ** len(drop)
    t = t.transpose(perm).reshape(dk, dd, dk, dd)
    return np.einsum("ajbj->ab", t)


def trace_out(x: np.ndarray, d: int, n: int, traced: Sequence[int]) -> np.ndarray:
    traced = set(_check_positions(traced, n))
    return partial_trace(x, d, n, [i for i in range(n) if i not in traced])


def normalized_partial_trace(x: np.ndarray, d: int, n: int, traced: Sequence[int]) -> np.ndarray:
    """tr_B[X] tensored with the maximally mixed state on B, back on the full register."""
    traced = sorted(_check_positions(traced, n))
    if not traced:
        return x
    keep = [i for i in range(n) if i not in traced]
    reduced = partial_trace(x, d, n, keep) / d ** len(traced)
    return embed(reduced, d, n, keep)


def embed(x: np.ndarray, d: int, n: int, positions: Sequence[int]) -> np.ndarray:
    """``x`` acting on the sites ``positions`` (ascending), identity elsewhere."""
    pos = _check_positions(positions, n)
    if pos != sorted(pos):
        raise DomainError("embed expects ascending positions")
    k = len(pos)
    if k == n:
        return x
    rest = [i for i in range(n) if i not in pos]
    full = np.kron(x, np.eye(d ** (n - k)))
    order = pos + rest
    # axis j of the kron product is the site order[j]; undo that permutation
    inv = np.argsort(order)
    t = full.reshape((d,) * (2 * n)).transpose(list(inv) + [n + i for i in inv])
    return t.reshape(d**n, d**n)


def permute_sites(x: np.ndarray, d: int, order: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors: factor ``j`` of the result is factor ``order[j]`` of ``x``."""
    n = len(order)
    t = x.reshape((d,) * (2 * n)).transpose(list(order) + [n + i for i in order])
    return t.reshape(d**n, d**n)


def apply_local_superop(m: np.ndarray, x: np.ndarray, d: int, n: int,
                        positions: Sequence[int]) -> np.ndarray:
    """Apply a superoperator on the sites ``positions`` to an operator on all ``n`` sites."""
    pos = sorted(_check_positions(positions, n))
    k = len(pos)
    if k == n:
        return (m @ x.reshape(-1)).reshape(x.shape)
    rest = [i for i in range(n) if i not in pos]
    perm = pos + [n + i for i in pos] + rest + [n + i for i in rest]
    t = x.reshape((d,) * (2 * n)).transpose(perm).reshape(d ** (2 * k), d ** (2 * (n - k)))
    t = (m @ t).reshape((d,) * (2 * n)).transpose(np.argsort(perm))
    return t.reshape(d**n, d**n)


def lift_superop(m: np.ndarray, d: int, n: int, positions: Sequence[int]) -> np.ndarray:
    """Matrix of ``m`` (acting on ``positions``) as a superoperator on all ``n`` sites."""
    dim = d**n
    cols = np.empty((dim * dim, dim * dim), dtype=complex)
    basis = np.zeros((dim, dim), dtype=complex)
    for j in range(dim * dim):
        basis.flat[j] = 1.0
        cols[:, j] = apply_local_superop(m, basis, d, n, positions).reshape(-1)
        basis.flat[j] = 0.0
    return cols


def sprepost(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Superoperator X -> a X b."""
    return np.kron(a, b.T)


def spre(a: np.ndarray) -> np.ndarray:
    return np.kron(a, np.eye(a.shape[0]))


def spost(b: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(b.shape[0]), b.T)


# -- functional calculus -----------------------------------------------------

def eigh(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.linalg.eigh(hermitize(x))


def funm(x: np.ndarray, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    w, v = eigh(x)
    return hermitize((v * f(w)) @ v.conj().T)


def expm(x: np.ndarray) -> np.ndarray:
    return funm(x, np.exp)


def logm(x: np.ndarray, tol: float = TOL_PD, name: str = "operator") -> np.ndarray:
    """Logarithm of a strictly positive operator."""
    w, v = eigh(x)
    if w[0] <= tol:
        raise SingularityError(f"{name} is not strictly positive (min eigenvalue {w[0]:.3e})",
                               float(w[0]))
    return hermitize((v * np.log(w)) @ v.conj().T)


def powm(x: np.ndarray, p: float, tol: float = TOL_PD) -> np.ndarray:
    w, v = eigh(x)
    if p < 0 and w[0] <= tol:
        raise SingularityError(f"negative power of a singular operator (min eigenvalue {w[0]:.3e})",
                               float(w[0]))
    return hermitize((v * np.clip(w, 0.0, None) ** p) @ v.conj().T)


def gibbs_from_hamiltonian(h: np.ndarray, beta: float) -> np.ndarray:
    """e^{-beta h}/Z with a spectral shift so large ``beta`` never overflows."""
    if np.allclose(h, np.diag(np.diag(h)), atol=0.0):
        e = -beta * np.real(np.diag(h))
        p = np.exp(e - e.max())
        return np.diag(p / p.sum()).astype(complex)
    w, v = eigh(h)
    e = -beta * w
    p = np.exp(e - e.max())
    return hermitize((v * (p / p.sum())) @ v.conj().T)


# -- norms and entropies -----------------------------------------------------

def op_norm(x: np.ndarray) -> float:
    if is_hermitian(x, 1e-12):
        w = np.linalg.eigvalsh(hermitize(x))
        return float(max(abs(w[0]), abs(w[-1]))) if w.size else 0.0
    return float(np.linalg.norm(x, 2))


def trace_norm(x: np.ndarray) -> float:
    if is_hermitian(x, 1e-12):
        return float(np.abs(np.linalg.eigvalsh(hermitize(x))).sum())
    return float(np.linalg.svd(x, compute_uv=False).sum())


def _xlogx(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    mask = p > TOL_PD
    out[mask] = p[mask] * np.log(p[mask])
    return out


def von_neumann_entropy(rho: np.ndarray) -> float:
    w = np.linalg.eigvalsh(hermitize(rho))
    return float(-_xlogx(w).sum())


def relative_entropy(rho: np.ndarray, sigma: np.ndarray) -> float:
    """D(rho||sigma) in nats; ``inf`` when the support of rho is not inside that of sigma."""
    wr, vr = eigh(rho)
    ws, vs = eigh(sigma)
    support = ws > TOL_PD
    overlap = np.abs(vr.conj().T @ vs) ** 2  # overlap[i, j] = |<r_i|s_j>|^2
    rho_mass = np.clip(wr, 0.0, None)
    if np.any(~support):
        leak = rho_mass @ overlap[:, ~support]
        if np.sum(leak) > TOL_PD:
            return float("inf")
    log_s = np.zeros_like(ws)
    log_s[support] = np.log(ws[support])
    cross = rho_mass @ overlap[:, support] @ log_s[support]
    return float(_xlogx(rho_mass).sum() - cross)


def conditional_relative_entropy(rho: np.ndarray, sigma: np.ndarray, d: int, n: int,
                                 region: Sequence[int]) -> float:
    """D(rho||sigma) minus the relative entropy of the marginals on the complement of ``region``."""
    region = set(_check_positions(region, n))
    if not region:
        return 0.0
    rest = [i for i in range(n) if i not in region]
    total = relative_entropy(rho, sigma)
    if not rest:
        return total
    marg = relative_entropy(partial_trace(rho, d, n, rest), partial_trace(sigma, d, n, rest))
    return total - marg


def weighted_inner(x: np.ndarray, y: np.ndarray, sigma: np.ndarray, s: float) -> complex:
    """<x, sigma^s y sigma^(1-s)> with the Hilbert-Schmidt pairing."""
    w, v = eigh(sigma)
    if w[0] <= TOL_PD:
        raise SingularityError(f"weighted inner product needs a full-rank state "
                               f"(min eigenvalue {w[0]:.3e})", float(w[0]))
    left = (v * w**s) @ v.conj().T
    right = (v * w ** (1.0 - s)) @ v.conj().T
    return complex(np.vdot(x, left @ y @ right))


# -- random states -----------------------------------------------------------

def haar_pure_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def random_density(dim: int, rng: np.random.Generator, mix: float = 0.1) -> np.ndarray:
    """Haar-random pure state mixed with the maximally mixed state at weight ``mix``."""
    return (1.0 - mix) * haar_pure_state(dim, rng) + mix * np.eye(dim) / dim


# -- serialization -----------------------------------------------------------

_MAGIC = b"DLOP"


def write_operator(path, x: np.ndarray, register: Register) -> None:
    """Binary container: header, site coordinates, interleaved real/imag doubles."""
    sites = [tuple(s) if isinstance(s, (tuple, list)) else (s,) for s in register.sites]
    ndim = len(sites[0]) if sites else 0
    rows, cols = x.shape
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<5q", 1, register.d, len(sites), ndim, rows))
        fh.write(struct.pack("<q", cols))
        fh.write(np.asarray(sites, dtype="<i8").reshape(-1).tobytes())
        fh.write(np.ascontiguousarray(x, dtype="<c16").tobytes())


def read_operator(path) -> tuple[np.ndarray, Register]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise DomainError("not an operator container")
        _version, d, nsites, ndim, rows = struct.unpack("<5q", fh.read(40))
        (cols,) = struct.unpack("<q", fh.read(8))
        coords = np.frombuffer(fh.read(8 * nsites * ndim), dtype="<i8").reshape(nsites, ndim)
        data = np.frombuffer(fh.read(16 * rows * cols), dtype="<c16").reshape(rows, cols)
    sites = tuple(tuple(int(v) for v in row) for row in coords)
    return data.copy(), Register(sites, int(d))


def operator_to_json(x: np.ndarray, register: Register) -> str:
    return json.dumps({
        "d": register.d,
        "sites": [list(s) if isinstance(s, tuple) else s for s in register.sites],
        "real": np.real(x).tolist(),
        "imag": np.imag(x).tolist(),
    })


def operator_from_json(text: str) -> tuple[np.ndarray, Register]:
    doc = json.loads(text)
    sites = tuple(tuple(s) if isinstance(s, list) else s for s in doc["sites"])
    x = np.array(doc["real"], dtype=float) + 1j * np.array(doc["imag"], dtype=float)
    return x, Register(sites, doc["d"])


# -- operator bases ----------------------------------------------------------

def hermitian_basis(d: int) -> list[np.ndarray]:
    """Hilbert-Schmidt orthonormal Hermitian basis of d x d matrices, identity first.

    For ``d = 2`` this is ``(I, X, Y, Z) / sqrt(2)``.
    """
    if d == 2:
        mats = [np.eye(2), np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]),
                np.diag([1.0, -1.0])]
        return [np.asarray(m, dtype=complex) / np.sqrt(2) for m in mats]
    basis = [np.eye(d, dtype=complex) / np.sqrt(d)]
    for j in range(d):
        for k in range(j + 1, d):
            sym = np.zeros((d, d), dtype=complex)
            sym[j, k] = sym[k, j] = 1 / np.sqrt(2)
            anti = np.zeros((d, d), dtype=complex)
            anti[j, k], anti[k, j] = -1j / np.sqrt(2), 1j / np.sqrt(2)
            basis += [sym, anti]
    for m in range(1, d):
        diag = np.zeros(d)
        diag[:m] = 1.0
        diag[m] = -m
        basis.append(np.diag(diag / np.sqrt(m * (m + 1))).astype(complex))
    return basis


def basis_coefficients(x: np.ndarray, d: int, n: int) -> np.ndarray:
    """Coefficients tr(G_a1 x ... x G_an X) in the product Hermitian basis, shape (d*d,)*n."""
    g = np.stack(hermitian_basis(d))
    # tr(G X) = sum_ij G[j, i] X[i, j]
    m = g.transpose(0, 2, 1).reshape(d * d, d * d)
    interleave = [a for i in range(n) for a in (i, n + i)]
    t = x.reshape((d,) * (2 * n)).transpose(interleave).reshape((d * d,) * n)
    for site in range(n):
        t = np.moveaxis(np.tensordot(m, t, axes=([1], [site])), 0, site)
    return t


def support_weights(x: np.ndarray, d: int, n: int, tol: float = 0.0) -> dict[frozenset, float]:
    """Hilbert-Schmidt weight of ``x`` on each exact support (a set of positions)."""
    coeff = basis_coefficients(x, d, n)
    out: dict[frozenset, float] = {}
    for idx in np.ndindex(coeff.shape):
        w = abs(coeff[idx]) ** 2
        if w > tol:
            key = frozenset(i for i, a in enumerate(idx) if a != 0)
            out[key] = out.get(key, 0.0) + w
    return {k: float(np.sqrt(v)) for k, v in out.items()}
