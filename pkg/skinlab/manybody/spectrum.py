from __future__ import annotations

import dataclasses
import logging
from typing import Literal, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from skinlab import settings
from skinlab.core.dynamics import EvolutionResult, Method, evolve_generator
from skinlab.core.model import Basis, DensityMatrix, ModelSpec, plane_wave
from skinlab.core.precision import DOUBLE, Precision
from skinlab.core.superop import (
    LiouvillianSpectrum,
    MatrixLike,
    _matrix,
    full_spectrum,
    liouvillian_from_operators,
    liouvillian_gap,
    sparse_liouvillian_from_operators,
)
from skinlab.errors import AmbiguousGapError, ConvergenceError, DimensionCapError, ModelError
from skinlab.manybody.sector import (
    SectorBasis,
    SectorOperators,
    assemble,
    build_sector_operators,
    mode_number_terms,
    momentum_isometry,
    sector_basis,
)

logger = logging.getLogger(__name__)

Solver = Literal["dense", "krylov"]


def sector_liouvillian(ops: SectorOperators, gamma: Optional[float] = None, sparse: Optional[bool] = None):
    g = ops.gamma if gamma is None else gamma
    h_eff = ops.hamiltonian.copy()
    for m in ops.jumps:
        h_eff = h_eff - 0.5j * g * (m.conj().T @ m)
    if sparse is None:
        sparse = not ops.dense
    if sparse:
        return sparse_liouvillian_from_operators(h_eff, ops.jumps, g)
    dense_h = h_eff.toarray() if sp.issparse(h_eff) else h_eff
    jumps = [m.toarray() if sp.issparse(m) else m for m in ops.jumps]
    return liouvillian_from_operators(dense_h, jumps, g)


def shift_invert_operator(a: sp.spmatrix, sigma: float) -> spla.LinearOperator:
    """``(A - sigma I)^{-1}`` applied by ILU-preconditioned GMRES."""
    n = a.shape[0]
    shifted = (a - sigma * sp.identity(n, dtype=complex, format="csc")).tocsc()
    try:
        ilu = spla.spilu(shifted, drop_tol=settings.KRYLOV_ILU_DROP_TOL, fill_factor=settings.KRYLOV_ILU_FILL)
        precond = spla.LinearOperator((n, n), matvec=ilu.solve, dtype=complex)
    except RuntimeError as exc:
        logger.warning("incomplete LU failed (%s); GMRES runs unpreconditioned", exc)
        precond = None

    def solve(b: np.ndarray) -> np.ndarray:
        x, info = spla.gmres(
            shifted,
            b,
            M=precond,
            rtol=settings.KRYLOV_SOLVE_RTOL,
            atol=0.0,
            restart=settings.KRYLOV_GMRES_RESTART,
            maxiter=settings.KRYLOV_GMRES_MAXITER,
        )
        if info != 0:
            res = float(np.linalg.norm(shifted @ x - b) / max(np.linalg.norm(b), 1e-300))
            raise ConvergenceError(
                f"shift-invert solve stopped with info={info}",
                op="manybody_spectrum",
                residuals=[res],
            )
        return x

    return spla.LinearOperator((n, n), matvec=solve, dtype=complex)


def _arnoldi(a: sp.spmatrix, nev: int) -> tuple[np.ndarray, np.ndarray]:
    nev = min(nev, a.shape[0] - 2)
    op = shift_invert_operator(a, settings.KRYLOV_SIGMA)
    try:
        return spla.eigs(a, k=nev, sigma=settings.KRYLOV_SIGMA, which="LM", OPinv=op)
    except spla.ArpackNoConvergence as exc:
        res = [float(np.linalg.norm(a @ exc.eigenvectors[:, i] - exc.eigenvalues[i] * exc.eigenvectors[:, i]))
               for i in range(len(exc.eigenvalues))]
        raise ConvergenceError(
            f"shift-invert Arnoldi converged {len(exc.eigenvalues)} of {nev} eigenvalues",
            op="manybody_spectrum",
            residuals=res,
        ) from exc


def _krylov_spectrum(a: sp.spmatrix, d: int, nev: int, blocks: Optional[list[sp.csr_matrix]] = None) -> LiouvillianSpectrum:
    norm = float(abs(a).max()) or 1.0
    if blocks is None:
        w, v = _arnoldi(a.tocsc(), nev)
    else:
        ws, vs = [], []
        for iso in blocks:
            reduced = (iso.conj().T @ (a @ iso)).tocsc()
            logger.debug("krylov momentum block dim=%d nnz=%d", reduced.shape[0], reduced.nnz)
            wq, vq = _arnoldi(reduced, nev)
            ws.append(wq)
            vs.append(iso @ vq)
        w, v = np.concatenate(ws), np.hstack(vs)
    zero = np.abs(w) < settings.ZERO_MODE_RTOL * norm * 100
    order = np.lexsort((w.imag, -w.real, ~zero))
    w, v = w[order], v[:, order]
    v = v / np.linalg.norm(v, axis=0, keepdims=True)
    spectrum = LiouvillianSpectrum(
        eigenvalues=w,
        right_modes=v,
        left_modes=np.zeros_like(v),
        gap=0.0,
        zero_mode_count=int(zero.sum()),
        hilbert_dim=d,
        conditioning=np.ones(w.shape[0]),
        precision="krylov",
        norm=norm,
        has_left_modes=False,
    )
    try:
        spectrum.gap = liouvillian_gap(spectrum)
    except AmbiguousGapError as exc:
        logger.warning("krylov gap left unset: %s", exc.message)
        spectrum.gap = float("nan")
    return spectrum


def manybody_spectrum(
    spec: ModelSpec,
    N: int,
    solver: Solver = "dense",
    nev: Optional[int] = None,
    precision: Union[Precision, str, None] = DOUBLE,
    momenta: Optional[Sequence[int]] = None,
) -> LiouvillianSpectrum:
    """Sector spectrum; the Krylov solver returns the ``nev`` eigenvalues nearest zero.

    Under PBC the Krylov solver works block by block in the ring-momentum
    sectors ``momenta`` of ``rho -> T rho T^dag`` (default 0 and 1, the
    long-wavelength blocks holding the slowest modes).
    """
    if solver == "dense":
        ops = build_sector_operators(spec, N, dense=True)
        a = sector_liouvillian(ops, sparse=False)
        spectrum = full_spectrum(a, precision)
        spectrum.basis = Basis("sector", spec.L, N)
        return spectrum
    if solver == "krylov":
        ops = build_sector_operators(spec, N, dense=False)
        a = sector_liouvillian(ops, sparse=True)
        logger.debug("krylov L=%d N=%d liouvillian dim=%d nnz=%d", spec.L, N, a.shape[0], a.nnz)
        blocks = None
        if spec.bc == "pbc":
            qs = (0, 1) if momenta is None else tuple(momenta)
            blocks = [momentum_isometry(ops.basis, q) for q in qs]
        elif momenta is not None:
            raise ModelError("momentum blocks need PBC", op="manybody_spectrum")
        spectrum = _krylov_spectrum(a, ops.basis.dim, nev or settings.KRYLOV_NEV, blocks)
        spectrum.basis = Basis("sector", spec.L, N)
        return spectrum
    raise ModelError(f"unknown solver {solver!r}", op="manybody_spectrum")


def density_profile(rho: MatrixLike, basis: SectorBasis) -> np.ndarray:
    """Site densities <n_i> of a sector density matrix."""
    diag = np.real(np.diag(_matrix(rho)))
    return diag @ basis.occupations()


def evolve_sector(
    spec: ModelSpec,
    N: int,
    rho0: MatrixLike,
    times: np.ndarray,
    method: Method = "auto",
) -> EvolutionResult:
    ops = build_sector_operators(spec, N)
    dim = ops.basis.dim
    if dim * dim > settings.DENSE_DIM_CAP and method != "integrator":
        if method == "spectral":
            raise DimensionCapError("sector Liouvillian too large for the spectral path", op="evolve_sector", dim=dim * dim)
        method = "integrator"
    generator = sector_liouvillian(ops, sparse=method == "integrator")
    result = evolve_generator(generator, rho0, times, method=method)
    occ = ops.basis.occupations()
    return dataclasses.replace(result, observables=result.observables @ occ)


def bistable_manybody_state(L: int, N: int) -> DensityMatrix:
    """Sector-projected occupation of the dark mode k = -pi/2, normalized."""
    if L % 4 != 0:
        raise ModelError("the dark mode k = -pi/2 needs L divisible by 4", op="bistable_manybody_state")
    basis = sector_basis(L, N)
    dark = plane_wave(L, 3 * L // 4)
    n_dark = assemble(basis, mode_number_terms(dark), dense=True)
    n_dark = 0.5 * (n_dark + n_dark.conj().T)
    return DensityMatrix(entries=n_dark / np.trace(n_dark).real, basis=Basis("sector", L, N))


def maximally_mixed_sector(L: int, N: int) -> DensityMatrix:
    basis = sector_basis(L, N)
    return DensityMatrix(entries=np.eye(basis.dim, dtype=complex) / basis.dim, basis=Basis("sector", L, N))
