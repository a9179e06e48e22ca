"""Single-particle operators of the monitored free-fermion chain.

Sites are 1..L in formulas and 0..L-1 in arrays: site ``n`` lives at row
``n - 1``. Bond ``j`` couples sites ``j`` and ``j + 1``; under PBC the extra
bond ``L`` couples sites ``L`` and ``1``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from skinlab.errors import ModelError

logger = logging.getLogger(__name__)


BoundaryCondition = Literal["obc", "pbc"]
BasisKind = Literal["site", "sector", "vectorized"]


class ModelSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    L: int = Field(ge=2, le=100_000)
    bc: BoundaryCondition = "obc"
    gamma: float = Field(default=1.0, ge=0.0)
    t: float = Field(default=1.0, gt=0.0)
    feedback: bool = True

    @property
    def n_bonds(self) -> int:
        return self.L if self.bc == "pbc" else self.L - 1

    @property
    def label(self) -> str:
        return "feedback" if self.feedback else "measure"


@dataclass(frozen=True)
class Basis:
    kind: BasisKind
    L: int
    N: Optional[int] = None

    @property
    def dim(self) -> int:
        if self.kind == "site":
            return self.L
        if self.kind == "sector":
            return math.comb(self.L, self.N or 0)
        return self.L * self.L


@dataclass(frozen=True)
class ComplexOperator:
    dim: int
    entries: np.ndarray
    basis: Basis

    def __post_init__(self) -> None:
        if self.entries.shape != (self.dim, self.dim):
            raise ModelError(
                f"entries have shape {self.entries.shape}, expected {(self.dim, self.dim)}",
                op="ComplexOperator",
            )
        if self.basis.kind != "vectorized" and self.basis.dim != self.dim:
            raise ModelError(
                f"dim {self.dim} does not match {self.basis.kind} basis dimension {self.basis.dim}",
                op="ComplexOperator",
            )
        self.entries.setflags(write=False)

    @property
    def dagger(self) -> np.ndarray:
        return self.entries.conj().T


def bonds(spec: ModelSpec) -> list[tuple[int, int]]:
    L = spec.L
    out = [(j, j + 1) for j in range(L - 1)]
    if spec.bc == "pbc":
        out.append((L - 1, 0))
    return out


def _site_operator(spec: ModelSpec, entries: np.ndarray) -> ComplexOperator:
    return ComplexOperator(dim=spec.L, entries=entries, basis=Basis("site", spec.L))


def build_hamiltonian(spec: ModelSpec) -> ComplexOperator:
    if spec.L < 2:
        raise ModelError("L must be at least 2", op="build_hamiltonian")
    h = np.zeros((spec.L, spec.L), dtype=complex)
    hop = spec.t / 4.0
    for a, b in bonds(spec):
        h[a, b] += hop
        h[b, a] += hop
    return _site_operator(spec, h)


def measured_projector(L: int, a: int, b: int) -> np.ndarray:
    p = np.zeros((L, L), dtype=complex)
    p[a, a] += 0.5
    p[b, b] += 0.5
    p[a, b] += 0.5j
    p[b, a] += -0.5j
    return p


def feedback_jump(L: int, a: int, b: int) -> np.ndarray:
    m = np.zeros((L, L), dtype=complex)
    m[a, a] += 0.5
    m[b, b] += -0.5
    m[a, b] += 0.5j
    m[b, a] += 0.5j
    return m


def build_jump_operators(spec: ModelSpec) -> list[ComplexOperator]:
    make = feedback_jump if spec.feedback else measured_projector
    return [_site_operator(spec, make(spec.L, a, b)) for a, b in bonds(spec)]


def build_effective_hamiltonian(spec: ModelSpec) -> ComplexOperator:
    # H - i(gamma/2) sum_j P_j written out entry by entry
    L = spec.L
    h = np.zeros((L, L), dtype=complex)
    fwd = (spec.t + spec.gamma) / 4.0
    bwd = (spec.t - spec.gamma) / 4.0
    loss = spec.gamma / 4.0
    for a, b in bonds(spec):
        h[a, b] += fwd
        h[b, a] += bwd
        h[a, a] += -1j * loss
        h[b, b] += -1j * loss
    return _site_operator(spec, h)


def mode_vector(L: int, j: int) -> np.ndarray:
    """Measured mode (e_j - i e_{j+1}) / sqrt(2) for bond ``j`` (1-based, wraps at L)."""
    v = np.zeros(L, dtype=complex)
    a = (j - 1) % L
    b = j % L
    v[a] = 1.0 / math.sqrt(2.0)
    v[b] = -1j / math.sqrt(2.0)
    return v


def momentum(L: int, j: int) -> float:
    return 2.0 * math.pi * (j % L) / L


def plane_wave(L: int, j: int) -> np.ndarray:
    k = momentum(L, j)
    n = np.arange(1, L + 1)
    return np.exp(-1j * k * n) / math.sqrt(L)


@dataclass(frozen=True)
class HatanoNelsonLocalization:
    ratio: float
    theory_length: Optional[float]
    singular: bool


def heff_localization(spec: ModelSpec) -> HatanoNelsonLocalization:
    num = abs(spec.t + spec.gamma)
    den = abs(spec.t - spec.gamma)
    if den == 0.0:
        logger.warning("gamma == t: localization ratio diverges (L=%d)", spec.L)
        return HatanoNelsonLocalization(ratio=math.inf, theory_length=None, singular=True)
    r = math.sqrt(num / den)
    length = 1.0 / math.log(r) if r != 1.0 else math.inf
    return HatanoNelsonLocalization(ratio=r, theory_length=length, singular=False)


@dataclass(frozen=True)
class DensityMatrix:
    entries: np.ndarray
    basis: Basis

    def __post_init__(self) -> None:
        self.entries.setflags(write=False)

    @property
    def dim(self) -> int:
        return int(self.entries.shape[0])

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    @property
    def diagonal(self) -> np.ndarray:
        return np.real(np.diag(self.entries)).copy()

    def check(self, tol: float = 1e-10, psd_floor: float = -1e-8) -> None:
        m = self.entries
        if abs(np.trace(m) - 1.0) > tol:
            raise ModelError(f"trace {np.trace(m).real:.3e} differs from 1", op="DensityMatrix")
        if np.max(np.abs(m - m.conj().T)) > tol:
            raise ModelError("density matrix is not Hermitian", op="DensityMatrix")
        lo = float(np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0])
        if lo < psd_floor:
            raise ModelError(f"smallest eigenvalue {lo:.3e} is negative", op="DensityMatrix")


def density(entries: np.ndarray, basis: Basis, check: bool = True) -> DensityMatrix:
    rho = DensityMatrix(entries=np.array(entries, dtype=complex), basis=basis)
    if rho.entries.shape != (basis.dim, basis.dim):
        raise ModelError(f"entries have shape {rho.entries.shape}, basis needs dim {basis.dim}", op="density")
    if check:
        rho.check()
    return rho


def site_state(L: int, site: int) -> DensityMatrix:
    """|site><site| with ``site`` 1-based."""
    m = np.zeros((L, L), dtype=complex)
    m[site - 1, site - 1] = 1.0
    return density(m, Basis("site", L), check=False)


def maximally_mixed(L: int) -> DensityMatrix:
    return density(np.eye(L, dtype=complex) / L, Basis("site", L), check=False)
