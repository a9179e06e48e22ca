"""Fixed-particle-number sector: occupation basis and operator assembly.

Site ``n`` (1-based) is bit ``n - 1`` of a basis bitmask. Operator strings use
Jordan-Wigner ordering by site index.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from skinlab import settings
from skinlab.core.model import ModelSpec, bonds
from skinlab.errors import DimensionCapError, ModelError

logger = logging.getLogger(__name__)

# (site, creation) factors applied right to left
Ladder = tuple[int, bool]
Term = tuple[complex, tuple[Ladder, ...]]
Matrix = Union[np.ndarray, sp.csr_matrix]


@dataclass(frozen=True)
class SectorBasis:
    L: int
    N: int
    states: np.ndarray = field(repr=False)
    index: dict[int, int] = field(repr=False, compare=False)

    @property
    def dim(self) -> int:
        return int(self.states.shape[0])

    def occupations(self) -> np.ndarray:
        """(dim, L) 0/1 matrix of site occupations."""
        bits = (self.states[:, None] >> np.arange(self.L)[None, :]) & 1
        return bits.astype(float)


def sector_basis(L: int, N: int) -> SectorBasis:
    if L < 1 or N < 0 or N > L:
        raise ModelError(f"no sector with L={L}, N={N}", op="sector_basis")
    masks = sorted(sum(1 << s for s in occ) for occ in itertools.combinations(range(L), N))
    states = np.array(masks, dtype=np.int64)
    return SectorBasis(L=L, N=N, states=states, index={m: i for i, m in enumerate(masks)})


def apply_string(mask: int, ops: Sequence[Ladder]) -> Optional[tuple[int, int]]:
    """Apply a ladder-operator string to a basis state; returns (sign, mask) or None."""
    sign = 1
    for site, create in reversed(ops):
        bit = 1 << site
        occupied = bool(mask & bit)
        if occupied == create:
            return None
        if bin(mask & (bit - 1)).count("1") % 2:
            sign = -sign
        mask ^= bit
    return sign, mask


def hop(a: int, b: int) -> tuple[Ladder, ...]:
    return ((a, True), (b, False))


def number(a: int) -> tuple[Ladder, ...]:
    return hop(a, a)


def assemble(basis: SectorBasis, terms: Sequence[Term], dense: bool) -> Matrix:
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []
    for col, mask in enumerate(basis.states.tolist()):
        for coef, ops in terms:
            if coef == 0:
                continue
            hit = apply_string(mask, ops)
            if hit is None:
                continue
            sign, new = hit
            row = basis.index.get(new)
            if row is None:
                raise ModelError("operator leaves the particle-number sector", op="assemble")
            rows.append(row)
            cols.append(col)
            vals.append(sign * coef)
    m = sp.coo_matrix((vals, (rows, cols)), shape=(basis.dim, basis.dim), dtype=complex).tocsr()
    m.sum_duplicates()
    return m.toarray() if dense else m


def hamiltonian_terms(spec: ModelSpec) -> list[Term]:
    hop_amp = spec.t / 4.0
    terms: list[Term] = []
    for a, b in bonds(spec):
        terms.append((hop_amp, hop(a, b)))
        terms.append((hop_amp, hop(b, a)))
    return terms


def jump_terms(spec: ModelSpec, a: int, b: int) -> list[Term]:
    if spec.feedback:
        return [
            (0.5, number(a)),
            (-0.5, number(b)),
            (0.5j, hop(a, b)),
            (0.5j, hop(b, a)),
            (-1.0, number(a) + number(b)),
        ]
    return [
        (0.5, number(a)),
        (0.5, number(b)),
        (0.5j, hop(a, b)),
        (-0.5j, hop(b, a)),
    ]


@dataclass
class SectorOperators:
    basis: SectorBasis
    hamiltonian: Matrix
    jumps: list[Matrix]
    gamma: float
    dense: bool

    @property
    def effective_hamiltonian(self) -> Matrix:
        out = self.hamiltonian.copy()
        for m in self.jumps:
            out = out - 0.5j * self.gamma * (m.conj().T @ m)
        return out


def build_sector_operators(spec: ModelSpec, N: int, dense: Optional[bool] = None) -> SectorOperators:
    if not 0 < N < spec.L:
        raise ModelError(f"particle number must satisfy 0 < N < L, got N={N}", op="build_sector_operators")
    dim = math.comb(spec.L, N)
    if dense is None:
        dense = dim <= settings.SECTOR_DENSE_CAP
    elif dense and dim > settings.SECTOR_DENSE_CAP:
        raise DimensionCapError(
            f"sector dimension {dim} exceeds dense cap {settings.SECTOR_DENSE_CAP}",
            op="build_sector_operators",
            dim=dim,
            cap=settings.SECTOR_DENSE_CAP,
        )
    basis = sector_basis(spec.L, N)
    h = assemble(basis, hamiltonian_terms(spec), dense)
    jumps = [assemble(basis, jump_terms(spec, a, b), dense) for a, b in bonds(spec)]
    logger.debug("sector L=%d N=%d dim=%d dense=%s bonds=%d", spec.L, N, dim, dense, len(jumps))
    return SectorOperators(basis=basis, hamiltonian=h, jumps=jumps, gamma=spec.gamma, dense=dense)


def mode_number_terms(mode: np.ndarray) -> list[Term]:
    """n_v = c_v^dag c_v for the single-particle mode ``v``."""
    terms: list[Term] = []
    for a in range(mode.shape[0]):
        for b in range(mode.shape[0]):
            coef = complex(mode[a] * np.conj(mode[b]))
            if abs(coef) > 0:
                terms.append((coef, hop(a, b)))
    return terms


def translation(basis: SectorBasis) -> tuple[np.ndarray, np.ndarray]:
    """Ring translation c_n -> c_{n+1}: ``T|s> = sign[s] |perm[s]>``."""
    L, N = basis.L, basis.N
    s = basis.states
    top = (s >> (L - 1)) & 1
    rolled = ((s << 1) & ((1 << L) - 1)) | top
    perm = np.array([basis.index[int(m)] for m in rolled.tolist()], dtype=np.int64)
    # the wrapped creator passes the other N - 1
    sign = np.where((top == 1) & ((N - 1) % 2 == 1), -1.0, 1.0)
    return perm, sign


def translation_matrix(basis: SectorBasis) -> sp.csr_matrix:
    perm, sign = translation(basis)
    cols = np.arange(basis.dim)
    return sp.csr_matrix((sign.astype(complex), (perm, cols)), shape=(basis.dim, basis.dim))


def momentum_isometry(basis: SectorBasis, q: int) -> sp.csr_matrix:
    """Orthonormal columns spanning vec(rho) with ``T rho T^dag = exp(2 pi i q / L) rho``.

    Vectorization is row-major, so the superoperator is ``T kron T*``.
    """
    L, dim = basis.L, basis.dim
    perm, sign = translation(basis)
    n = dim * dim
    v = np.arange(n, dtype=np.int64)
    a, b = np.divmod(v, dim)
    images = np.empty((L + 1, n), dtype=np.int64)
    signs = np.empty((L + 1, n))
    s = np.ones(n)
    for k in range(L + 1):
        images[k] = a * dim + b
        signs[k] = s
        s = s * sign[a] * sign[b]
        a, b = perm[a], perm[b]
    rep = images[:L].min(axis=0)
    hit = images[1 : L + 1] == v
    period = hit.argmax(axis=0) + 1
    phase = np.exp(2j * np.pi * q / L)
    closes = np.abs(signs[period, v] * phase ** (-period) - 1.0) < 1e-9
    reps = np.nonzero((rep == v) & closes)[0]
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    col_of = np.arange(reps.size)
    p = period[reps]
    for k in range(L):
        live = k < p
        r = reps[live]
        rows.append(images[k, r])
        cols.append(col_of[live])
        vals.append(phase ** (-k) * signs[k, r] / np.sqrt(p[live]))
    logger.debug("momentum q=%d sector L=%d N=%d: %d of %d vec states", q, L, basis.N, reps.size, n)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, reps.size),
    )
