"""Vectorized Liouvillian and its biorthogonal eigendecomposition.

Density matrices are vectorized row-major: ``vec(rho)[a * d + b] = rho[a, b]``,
so ``vec(A rho B) = (A kron B.T) vec(rho)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from skinlab import settings
from skinlab.core.model import (
    Basis,
    ComplexOperator,
    DensityMatrix,
    ModelSpec,
    build_effective_hamiltonian,
    build_hamiltonian,
    build_jump_operators,
)
from skinlab.core.precision import DOUBLE, Precision, extended_eig, parse_precision
from skinlab.errors import AmbiguousGapError, BackendUnavailableError, DimensionCapError, IllConditionedError, ModelError

logger = logging.getLogger(__name__)

MatrixLike = Union[np.ndarray, DensityMatrix, ComplexOperator]


def _matrix(x: MatrixLike) -> np.ndarray:
    if isinstance(x, (DensityMatrix, ComplexOperator)):
        return np.asarray(x.entries)
    return np.asarray(x)


def liouvillian_from_operators(h_eff: np.ndarray, jumps: Sequence[np.ndarray], gamma: float) -> np.ndarray:
    d = h_eff.shape[0]
    eye = np.eye(d, dtype=complex)
    out = -1j * (np.kron(h_eff, eye) - np.kron(eye, h_eff.conj()))
    for m in jumps:
        out += gamma * np.kron(m, m.conj())
    return out


def sparse_liouvillian_from_operators(h_eff, jumps: Sequence, gamma: float) -> sp.csr_matrix:
    h_eff = sp.csr_matrix(h_eff)
    d = h_eff.shape[0]
    eye = sp.identity(d, dtype=complex, format="csr")
    out = -1j * (sp.kron(h_eff, eye) - sp.kron(eye, h_eff.conj()))
    for m in jumps:
        m = sp.csr_matrix(m)
        out = out + gamma * sp.kron(m, m.conj())
    return sp.csr_matrix(out)


def _check_cap(spec: ModelSpec, op: str) -> None:
    dim = spec.L * spec.L
    if dim > settings.DENSE_DIM_CAP:
        raise DimensionCapError(
            f"Liouvillian dimension {dim} exceeds dense cap {settings.DENSE_DIM_CAP}",
            op=op,
            dim=dim,
            cap=settings.DENSE_DIM_CAP,
        )


def vectorize_liouvillian(spec: ModelSpec) -> ComplexOperator:
    _check_cap(spec, "vectorize_liouvillian")
    h_eff = build_effective_hamiltonian(spec).entries
    jumps = [j.entries for j in build_jump_operators(spec)]
    out = liouvillian_from_operators(h_eff, jumps, spec.gamma)
    return ComplexOperator(dim=out.shape[0], entries=out, basis=Basis("vectorized", spec.L))


def liouvillian_sparse(spec: ModelSpec) -> sp.csr_matrix:
    h_eff = build_effective_hamiltonian(spec).entries
    jumps = [j.entries for j in build_jump_operators(spec)]
    return sparse_liouvillian_from_operators(h_eff, jumps, spec.gamma)


def adjoint_liouvillian(spec: ModelSpec) -> ComplexOperator:
    # L^dag(X) = i H_eff^dag X - i X H_eff + gamma sum_mu L_mu^dag X L_mu
    _check_cap(spec, "adjoint_liouvillian")
    h_eff = build_effective_hamiltonian(spec).entries
    d = spec.L
    eye = np.eye(d, dtype=complex)
    out = 1j * (np.kron(h_eff.conj().T, eye) - np.kron(eye, h_eff.T))
    for j in build_jump_operators(spec):
        m = j.entries
        out += spec.gamma * np.kron(m.conj().T, m.T)
    return ComplexOperator(dim=out.shape[0], entries=out, basis=Basis("vectorized", spec.L))


def lindblad_rhs(h: np.ndarray, jumps: Sequence[np.ndarray], gamma: float, rho: np.ndarray) -> np.ndarray:
    out = -1j * (h @ rho - rho @ h)
    for m in jumps:
        md = m.conj().T
        p = md @ m
        out += gamma * (m @ rho @ md - 0.5 * (p @ rho + rho @ p))
    return out


def apply_lindbladian(spec: ModelSpec, rho: MatrixLike) -> np.ndarray:
    h = build_hamiltonian(spec).entries
    jumps = [j.entries for j in build_jump_operators(spec)]
    return lindblad_rhs(h, jumps, spec.gamma, _matrix(rho))


@dataclass
class LiouvillianSpectrum:
    eigenvalues: np.ndarray
    right_modes: np.ndarray
    left_modes: np.ndarray
    gap: float
    zero_mode_count: int
    hilbert_dim: int
    conditioning: np.ndarray
    ill_conditioned: bool = False
    precision: str = "double"
    norm: float = 1.0
    basis: Optional[Basis] = None
    has_left_modes: bool = True

    def __len__(self) -> int:
        return int(self.eigenvalues.shape[0])

    def right(self, i: int) -> np.ndarray:
        d = self.hilbert_dim
        return self.right_modes[:, i].reshape(d, d)

    def left(self, i: int) -> np.ndarray:
        d = self.hilbert_dim
        return self.left_modes[:, i].reshape(d, d)

    @property
    def first_excited(self) -> int:
        return _first_excited_index(self)


def _sort_order(w: np.ndarray, zero: np.ndarray, quantum: float) -> np.ndarray:
    re_key = np.round(w.real / quantum)
    im_key = np.round(w.imag / quantum)
    idx = np.arange(w.shape[0])
    # lexsort: last key is primary
    return np.lexsort((idx, im_key, -re_key, ~zero))


def eigenvalue_clusters(w: np.ndarray, tol: float) -> list[np.ndarray]:
    pts = np.column_stack([w.real, w.imag])
    pairs = cKDTree(pts).query_pairs(r=tol, output_type="ndarray")
    n = w.shape[0]
    if pairs.size == 0:
        return [np.array([i]) for i in range(n)]
    graph = sp.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    return [np.array(g) for g in sorted(groups.values(), key=lambda g: g[0])]


def _biorthonormalize(w: np.ndarray, vl: np.ndarray, vr: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    vr = vr / np.linalg.norm(vr, axis=0, keepdims=True)
    vl = vl / np.linalg.norm(vl, axis=0, keepdims=True)
    conditioning = np.abs(np.einsum("ij,ij->j", vl.conj(), vr))
    for idx in eigenvalue_clusters(w, settings.CLUSTER_TOL):
        if idx.size == 1:
            i = int(idx[0])
            s = np.vdot(vl[:, i], vr[:, i])
            if s != 0:
                vl[:, i] = vl[:, i] / np.conj(s)
            continue
        s = vl[:, idx].conj().T @ vr[:, idx]
        sv = np.linalg.svd(s, compute_uv=False)
        conditioning[idx] = sv[-1]
        if sv[-1] > 0:
            vl[:, idx] = vl[:, idx] @ np.linalg.inv(s).conj().T
    return vl, vr, conditioning


def hermitian_basis(d: int) -> sp.csr_matrix:
    """Unitary whose columns vectorize an orthonormal basis of Hermitian d x d matrices.

    A Hermiticity-preserving generator is real in this basis.
    """
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []
    c = 0
    s = 1.0 / math.sqrt(2.0)
    for i in range(d):
        rows.append(i * d + i)
        cols.append(c)
        vals.append(1.0)
        c += 1
        for j in range(i + 1, d):
            rows += [i * d + j, j * d + i, i * d + j, j * d + i]
            cols += [c, c, c + 1, c + 1]
            vals += [s, s, 1j * s, -1j * s]
            c += 2
    return sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(d * d, d * d))


def _real_form(a: np.ndarray, d: int) -> Optional[tuple[np.ndarray, sp.csr_matrix]]:
    u = hermitian_basis(d)
    b = u.conj().T @ (u.T @ a.T).T
    if np.max(np.abs(b.imag)) > settings.SPECTRUM_TOL * max(float(np.max(np.abs(b.real))), 1.0):
        return None
    return np.ascontiguousarray(b.real), u


def _double_eig(a: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    real = _real_form(a, d)
    b = a if real is None else real[0]
    bal, scale = scipy.linalg.matrix_balance(b, permute=False, separate=True)
    t = scale[0]
    w, vl, vr = scipy.linalg.eig(bal, left=True, right=True)
    vr = t[:, None] * vr
    vl = vl / t[:, None]
    if real is not None:
        # real input: complex eigenvalues come in exact conjugate pairs
        u = real[1]
        vr = u @ vr
        vl = u @ vl
    return w, vl, vr


def full_spectrum(
    liouvillian: Union[ComplexOperator, np.ndarray],
    precision: Union[Precision, str, None] = DOUBLE,
    strict: bool = False,
) -> LiouvillianSpectrum:
    prec = parse_precision(precision)
    a = np.array(_matrix(liouvillian), dtype=complex)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ModelError(f"Liouvillian must be square, got {a.shape}", op="full_spectrum")
    d = math.isqrt(n)
    if d * d != n:
        raise ModelError(f"dimension {n} is not a perfect square", op="full_spectrum")

    norm = float(np.max(np.abs(a))) or 1.0
    if prec.kind == "extended":
        w, vl, vr = extended_eig(a, prec.digits)
    else:
        w, vl, vr = _double_eig(a, d)

    zero = np.abs(w) < settings.ZERO_MODE_RTOL * norm
    order = _sort_order(w, zero, 1e-12 * norm)
    w, vl, vr, zero = w[order], vl[:, order], vr[:, order], zero[order]
    vl, vr, conditioning = _biorthonormalize(w, vl, vr)

    bad = conditioning < settings.OVERLAP_FLOOR
    ill = bool(np.any(bad))
    if ill:
        logger.warning(
            "ill-conditioned eigenvectors: %d modes with overlap < %.1e (min %.2e, precision %s)",
            int(bad.sum()), settings.OVERLAP_FLOOR, float(conditioning.min()), prec.label,
        )
        if strict:
            raise IllConditionedError(
                "left/right overlaps below floor; retry with extended precision",
                op="full_spectrum",
                min_overlap=float(conditioning.min()),
            )
        if prec.kind == "double" and n <= settings.EXTENDED_RETRY_DIM:
            try:
                retried = full_spectrum(liouvillian, Precision(kind="extended", digits=settings.EXTENDED_DIGITS))
            except BackendUnavailableError as exc:
                logger.info("no extended retry: %s", exc.message)
            else:
                logger.info("retried n=%d in %s", n, retried.precision)
                return retried

    spec = LiouvillianSpectrum(
        eigenvalues=w,
        right_modes=vr,
        left_modes=vl,
        gap=0.0,
        zero_mode_count=int(zero.sum()),
        hilbert_dim=d,
        conditioning=conditioning,
        ill_conditioned=ill,
        precision=prec.label,
        norm=norm,
        basis=liouvillian.basis if isinstance(liouvillian, ComplexOperator) else None,
    )
    if spec.zero_mode_count == 0:
        logger.warning("no zero mode found (n=%d, min |lambda| = %.2e)", n, float(np.min(np.abs(w))))
    try:
        spec.gap = liouvillian_gap(spec)
    except AmbiguousGapError as exc:
        logger.warning("gap left unset: %s", exc.message)
        spec.gap = float("nan")
    logger.debug("spectrum n=%d zero_modes=%d gap=%.6g", n, spec.zero_mode_count, spec.gap)
    return spec


def _first_excited_index(spectrum: LiouvillianSpectrum) -> int:
    tol = settings.SPECTRUM_TOL * max(spectrum.norm, 1.0)
    w = spectrum.eigenvalues
    for i in range(spectrum.zero_mode_count, len(w)):
        if -w[i].real > tol:
            return i
    return -1


def liouvillian_gap(spectrum: LiouvillianSpectrum) -> float:
    w = spectrum.eigenvalues
    z = spectrum.zero_mode_count
    tol = settings.SPECTRUM_TOL * max(spectrum.norm, 1.0)
    rest = w[z:]
    near = rest[np.abs(rest) < tol]
    if near.size:
        raise AmbiguousGapError(
            f"{near.size} eigenvalues within {tol:.1e} of zero outside the steady manifold",
            op="liouvillian_gap",
            zero_mode_count=z,
        )
    i = _first_excited_index(spectrum)
    if i < 0:
        logger.warning("no decaying mode: spectrum is purely imaginary")
        return 0.0
    return float(abs(w[i].real))


@dataclass
class ExpansionCoefficients:
    values: np.ndarray
    conditioning: np.ndarray
    steady_values: np.ndarray
    max_abs: float
    ill_conditioned: bool = False

    def __len__(self) -> int:
        return int(self.values.shape[0])


def expansion_coefficients(spectrum: LiouvillianSpectrum, rho0: MatrixLike) -> ExpansionCoefficients:
    m = _matrix(rho0)
    d = spectrum.hilbert_dim
    if m.shape != (d, d):
        raise ModelError(f"rho0 has shape {m.shape}, expected {(d, d)}", op="expansion_coefficients")
    if not spectrum.has_left_modes:
        raise ModelError(
            f"{spectrum.precision} spectrum carries no left modes; expand on a dense spectrum",
            op="expansion_coefficients",
        )
    v = m.reshape(-1)
    overlaps = np.einsum("ij,ij->j", spectrum.left_modes.conj(), spectrum.right_modes)
    c = (spectrum.left_modes.conj().T @ v) / overlaps
    z = spectrum.zero_mode_count
    values = c[z:]
    max_abs = float(np.max(np.abs(values))) if values.size else 0.0
    logger.debug("expansion max|c|=%.3e", max_abs)
    return ExpansionCoefficients(
        values=values,
        conditioning=spectrum.conditioning[z:],
        steady_values=c[:z],
        max_abs=max_abs,
        ill_conditioned=spectrum.ill_conditioned,
    )


def steady_component(spectrum: LiouvillianSpectrum, coeffs: ExpansionCoefficients) -> np.ndarray:
    z = spectrum.zero_mode_count
    vec = spectrum.right_modes[:, :z] @ coeffs.steady_values
    d = spectrum.hilbert_dim
    return vec.reshape(d, d)


def reconstruct(spectrum: LiouvillianSpectrum, coeffs: ExpansionCoefficients) -> np.ndarray:
    z = spectrum.zero_mode_count
    vec = spectrum.right_modes[:, z:] @ coeffs.values
    d = spectrum.hilbert_dim
    return steady_component(spectrum, coeffs) + vec.reshape(d, d)


def first_mode_weight(spectrum: LiouvillianSpectrum, coeffs: ExpansionCoefficients) -> float:
    i = spectrum.first_excited
    if i < 0:
        return 0.0
    c1 = coeffs.values[i - spectrum.zero_mode_count]
    r1 = spectrum.right(i)
    m = c1 * r1 + np.conj(c1) * r1.conj().T
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def mode_magnitudes(spectrum: LiouvillianSpectrum, indices: Iterable[int]) -> list[np.ndarray]:
    return [np.abs(spectrum.right(i)) for i in indices]
