"""Perturbation theory around the no-jump Liouvillian.

The unperturbed generator is ``-i(H_eff kron I - I kron H_eff*)``; the jump
term ``gamma * sum_mu L_mu kron L_mu*`` is the perturbation. Under PBC the
unperturbed modes are the plane-wave pairs ``|k> kron |k'>*`` and every
matrix element has a closed form in the integer momentum indices. The
closed forms take t = 1.
"""
from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from skinlab.core.model import (
    ModelSpec,
    build_effective_hamiltonian,
    build_jump_operators,
    momentum,
    plane_wave,
)
from skinlab.core.superop import eigenvalue_clusters
from skinlab.errors import ModelError, PerturbationError

logger = logging.getLogger(__name__)

QUASI_DEGENERATE_FACTOR = 8.0


@dataclass(frozen=True, order=True)
class MomentumPair:
    j: int
    jp: int
    L: int

    def __post_init__(self) -> None:
        if self.L < 2:
            raise ModelError("momentum grid needs L >= 2", op="MomentumPair")
        object.__setattr__(self, "j", self.j % self.L)
        object.__setattr__(self, "jp", self.jp % self.L)

    @property
    def k(self) -> float:
        return momentum(self.L, self.j)

    @property
    def kp(self) -> float:
        return momentum(self.L, self.jp)

    @property
    def transfer(self) -> int:
        return (self.j - self.jp) % self.L

    def vector(self) -> np.ndarray:
        return np.kron(plane_wave(self.L, self.j), plane_wave(self.L, self.jp).conj())


@dataclass
class PerturbativeSpectrum:
    order: int
    eigenvalues: np.ndarray
    degeneracy_classes: Optional[list[list[MomentumPair]]] = None


def _require_pbc(spec: ModelSpec, op: str) -> None:
    if spec.bc != "pbc":
        raise ModelError("plane-wave perturbation theory needs PBC", op=op)


def zeroth_order_pbc(pair: MomentumPair, gamma: float) -> complex:
    k, kp = pair.k, pair.kp
    return complex(-0.5 * gamma * (2.0 + math.sin(k) + math.sin(kp)), -0.5 * (math.cos(k) - math.cos(kp)))


def first_order_pbc(pair: MomentumPair, gamma: float, feedback: bool) -> complex:
    k, kp = pair.k, pair.kp
    if feedback:
        return complex(gamma * math.cos(k) * math.cos(kp) / pair.L)
    return complex(gamma * (1.0 + math.sin(k)) * (1.0 + math.sin(kp)) / pair.L)


def _bond_factor(a: float, b: float, feedback: bool) -> complex:
    # <k_a| L_j |k_b> = e^{i(k_a - k_b) j} * factor / (2L)
    left = 1 + 1j * cmath.exp(1j * a) if feedback else 1 - 1j * cmath.exp(1j * a)
    return left * (1 + 1j * cmath.exp(-1j * b))


def coupling(row: MomentumPair, col: MomentumPair, gamma: float, feedback: bool) -> complex:
    """Matrix element of the jump term between two plane-wave pairs."""
    if row.L != col.L:
        raise ModelError("pairs live on different lattices", op="coupling")
    if row.transfer != col.transfer:
        return 0j
    f = _bond_factor(row.k, col.k, feedback)
    g = _bond_factor(row.kp, col.kp, feedback)
    return gamma * f * g.conjugate() / (4.0 * row.L)


def class_key(pair: MomentumPair) -> tuple:
    """Integer label shared exactly by pairs with equal zeroth-order eigenvalue."""
    L, j, jp = pair.L, pair.j, pair.jp
    if (j + jp) % L == 0:
        return ("antipodal",)
    if L % 2 == 0:
        partner = ((L // 2 - jp) % L, (L // 2 - j) % L)
        return ("pair",) + min((j, jp), partner)
    return ("pair", j, jp)


def degeneracy_classes(L: int) -> list[list[MomentumPair]]:
    groups: dict[tuple, list[MomentumPair]] = {}
    for j in range(L):
        for jp in range(L):
            p = MomentumPair(j, jp, L)
            groups.setdefault(class_key(p), []).append(p)
    return sorted(groups.values(), key=lambda g: (g[0].j, g[0].jp))


def second_order_feedback_pbc(pair: MomentumPair, gamma: float) -> complex:
    L = pair.L
    k, kp = pair.k, pair.kp
    lam0 = zeroth_order_pbc(pair, gamma)
    key = class_key(pair)
    total = 0j
    for j2 in range(L):
        if j2 == pair.j:
            continue
        other = MomentumPair(j2, j2 + pair.jp - pair.j, L)
        num = math.cos(k) * math.cos(other.k) * math.cos(kp) * math.cos(other.kp)
        if class_key(other) == key:
            if num == 0.0:
                continue
            raise PerturbationError(
                f"vanishing denominator between {(pair.j, pair.jp)} and {(other.j, other.jp)}",
                op="second_order_feedback_pbc",
            )
        total += num / (lam0 - zeroth_order_pbc(other, gamma))
    return gamma**2 * total / L**2


def degenerate_first_order(members: Sequence[MomentumPair], spec: ModelSpec) -> np.ndarray:
    _require_pbc(spec, "degenerate_first_order")
    n = len(members)
    block = np.array(
        [[coupling(a, b, spec.gamma, spec.feedback) for b in members] for a in members],
        dtype=complex,
    )
    if n == 1:
        return block[0]
    if n == 2:
        tr = 0.5 * (block[0, 0] + block[1, 1])
        disc = np.sqrt((block[0, 0] - block[1, 1]) ** 2 + 4.0 * block[0, 1] * block[1, 0])
        return np.array([tr + 0.5 * disc, tr - 0.5 * disc])
    return scipy.linalg.eigvals(block)


def first_order_eigenvector_pbc(pair: MomentumPair, spec: ModelSpec) -> np.ndarray:
    """Vectorized first-order correction of ``|k> kron |k'>*`` (row-major)."""
    _require_pbc(spec, "first_order_eigenvector_pbc")
    L = pair.L
    lam0 = zeroth_order_pbc(pair, spec.gamma)
    key = class_key(pair)
    out = np.zeros(L * L, dtype=complex)
    for j2 in range(L):
        if j2 == pair.j:
            continue
        other = MomentumPair(j2, j2 + pair.jp - pair.j, L)
        elem = coupling(other, pair, spec.gamma, spec.feedback)
        if elem == 0:
            continue
        if class_key(other) == key:
            raise PerturbationError(
                "degenerate partner couples to this pair; use degenerate_first_order",
                op="first_order_eigenvector_pbc",
            )
        out += elem / (lam0 - zeroth_order_pbc(other, spec.gamma)) * other.vector()
    return out


def zeroth_order_obc(pair: MomentumPair, gamma: float) -> complex:
    k, kp = pair.k, pair.kp
    if gamma < 1.0:
        s = math.sqrt(1.0 - gamma * gamma)
        return complex(-gamma, -0.5 * s * (math.cos(k) - math.cos(kp)))
    if gamma > 1.0:
        s = math.sqrt(gamma * gamma - 1.0)
        return complex(-0.5 * s * (math.sin(k) + math.sin(kp)) - gamma, 0.0)
    return complex(-gamma, 0.0)


def approximate_obc_eigenvectors(j: int, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Approximate right and left H_eff eigenvectors at k = 2*pi*j/L under OBC.

    The left vector is returned as a ket, so ``left.conj() @ right == 1``.
    """
    if spec.gamma == spec.t:
        logger.warning("gamma == t: approximate OBC eigenvectors are singular")
        raise PerturbationError("gamma == t has no approximate OBC eigenvectors", op="approximate_obc_eigenvectors")
    L = spec.L
    ratio = math.sqrt(abs(spec.t - spec.gamma) / (spec.t + spec.gamma))
    n = np.arange(1, L + 1)
    phase = np.exp(-1j * momentum(L, j) * n) / math.sqrt(L)
    right = ratio**n * phase
    left = ratio ** (-n) * phase
    return right, left


def population_block_pbc(spec: ModelSpec) -> np.ndarray:
    """Exact generator restricted to the equal-momentum pairs ``|k> kron |k>*``."""
    _require_pbc(spec, "population_block_pbc")
    L = spec.L
    s = np.sin(2.0 * np.pi * np.arange(L) / L)
    out = np.diag(-spec.gamma * (1.0 + s)).astype(complex)
    left = (1.0 - s) if spec.feedback else (1.0 + s)
    out += (spec.gamma / L) * np.outer(left, 1.0 + s)
    return out


def dark_pair_eigenvalues(spec: ModelSpec) -> np.ndarray:
    """Exact eigenvalues of ``|-pi/2> kron |k'>*``; ``L_j |-pi/2> = 0`` for every bond."""
    _require_pbc(spec, "dark_pair_eigenvalues")
    if spec.L % 4 != 0:
        raise ModelError("k = -pi/2 needs L divisible by 4", op="dark_pair_eigenvalues")
    k = 2.0 * np.pi * np.arange(spec.L) / spec.L
    return 0.5j * spec.t * np.cos(k) - 0.5 * spec.gamma * (1.0 + np.sin(k))


def transfer_block(spec: ModelSpec, q: int) -> tuple[list[MomentumPair], np.ndarray, np.ndarray]:
    """Pairs with momentum transfer ``q``, their zeroth-order values and the jump-term block."""
    _require_pbc(spec, "transfer_block")
    L = spec.L
    pairs = [MomentumPair(j + q, j, L) for j in range(L)]
    lam0 = np.array([zeroth_order_pbc(p, spec.gamma) for p in pairs], dtype=complex)
    k = np.array([[coupling(a, b, spec.gamma, spec.feedback) for b in pairs] for a in pairs], dtype=complex)
    return pairs, lam0, k


def quasi_degenerate_tol(k: np.ndarray) -> float:
    """Zeroth-order splittings below this are diagonalized together with the coupling."""
    off = np.abs(k - np.diag(np.diag(k)))
    return QUASI_DEGENERATE_FACTOR * float(off.max()) if off.size else 0.0


def clustered_first_order(lam0: np.ndarray, k: np.ndarray, tol: float) -> tuple[np.ndarray, list[np.ndarray]]:
    out = np.empty(lam0.shape[0], dtype=complex)
    clusters = eigenvalue_clusters(lam0, tol) if tol > 0 else [np.array([i]) for i in range(lam0.shape[0])]
    for idx in clusters:
        if idx.size == 1:
            out[idx[0]] = lam0[idx[0]] + k[idx[0], idx[0]]
        else:
            out[idx] = scipy.linalg.eigvals(np.diag(lam0[idx]) + k[np.ix_(idx, idx)])
    return out, clusters


def _pbc_spectrum(spec: ModelSpec, order: int, tol: Optional[float]) -> PerturbativeSpectrum:
    classes = degeneracy_classes(spec.L)
    out: list[complex] = []
    for q in range(spec.L):
        pairs, lam0, k = transfer_block(spec, q)
        if order == 0:
            out.extend(lam0)
            continue
        values, clusters = clustered_first_order(lam0, k, quasi_degenerate_tol(k) if tol is None else tol)
        if order >= 2 and spec.feedback:
            for idx in clusters:
                if idx.size != 1:
                    continue
                try:
                    values[idx[0]] += second_order_feedback_pbc(pairs[idx[0]], spec.gamma)
                except PerturbationError as exc:
                    logger.debug("second order skipped: %s", exc.message)
        out.extend(values)
    return PerturbativeSpectrum(order=order, eigenvalues=np.array(out, dtype=complex), degeneracy_classes=classes)


def _obc_spectrum(spec: ModelSpec, tol: Optional[float]) -> PerturbativeSpectrum:
    # first order on the exact biorthogonal H_eff eigenbasis
    h_eff = build_effective_hamiltonian(spec).entries
    w, r = scipy.linalg.eig(h_eff)
    rinv = np.linalg.inv(r)
    L = spec.L
    lam0 = (-1j * (w[:, None] - w.conj()[None, :])).reshape(-1)
    k = np.zeros((L * L, L * L), dtype=complex)
    for op in build_jump_operators(spec):
        a = rinv @ op.entries @ r
        k += spec.gamma * np.kron(a, a.conj())
    out, _ = clustered_first_order(lam0, k, quasi_degenerate_tol(k) if tol is None else tol)
    return PerturbativeSpectrum(order=1, eigenvalues=out)


def first_order_spectrum(spec: ModelSpec, order: int = 1, tol: Optional[float] = None) -> PerturbativeSpectrum:
    """Perturbative spectrum; pairs split by less than ``tol`` are treated as degenerate.

    ``tol`` defaults to ``QUASI_DEGENERATE_FACTOR`` times the largest off-diagonal
    jump-term element.
    """
    if order not in (0, 1, 2):
        raise ModelError("order must be 0, 1 or 2", op="first_order_spectrum")
    if spec.bc == "pbc":
        return _pbc_spectrum(spec, order, tol)
    if order == 2:
        raise ModelError("second order is only available under PBC", op="first_order_spectrum")
    if order == 0:
        pairs = [MomentumPair(j, jp, spec.L) for j in range(spec.L) for jp in range(spec.L)]
        return PerturbativeSpectrum(order=0, eigenvalues=np.array([zeroth_order_obc(p, spec.gamma) for p in pairs]))
    return _obc_spectrum(spec, tol)


@dataclass(frozen=True)
class MatchedDistance:
    max_distance: float
    mean_distance: float
    used_assignment: bool


def matched_pair_distance(a: Sequence[complex], b: Sequence[complex]) -> MatchedDistance:
    x = np.asarray(a, dtype=complex)
    y = np.asarray(b, dtype=complex)
    if x.shape != y.shape:
        raise ModelError(f"spectra differ in size: {x.shape} vs {y.shape}", op="matched_pair_distance")
    cost = np.abs(x[:, None] - y[None, :])
    nearest = np.argmin(cost, axis=1)
    if np.unique(nearest).size == nearest.size:
        d = cost[np.arange(x.size), nearest]
        return MatchedDistance(float(d.max()), float(d.mean()), False)
    rows, cols = linear_sum_assignment(cost)
    d = cost[rows, cols]
    return MatchedDistance(float(d.max()), float(d.mean()), True)
