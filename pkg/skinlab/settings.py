from __future__ import annotations

import os


DENSE_DIM_CAP = int(os.getenv("SKINLAB_DENSE_DIM_CAP", "6400"))
SECTOR_DENSE_CAP = int(os.getenv("SKINLAB_SECTOR_DENSE_CAP", "100"))
SECTOR_TRAJ_CAP = int(os.getenv("SKINLAB_SECTOR_TRAJ_CAP", "20000"))

EXTENDED_DIGITS = int(os.getenv("SKINLAB_EXTENDED_DIGITS", "30"))
EXTENDED_RETRY_DIM = int(os.getenv("SKINLAB_EXTENDED_RETRY_DIM", "36"))

ZERO_MODE_RTOL = float(os.getenv("SKINLAB_ZERO_MODE_RTOL", "1e-10"))
CLUSTER_TOL = float(os.getenv("SKINLAB_CLUSTER_TOL", "1e-9"))
OVERLAP_FLOOR = float(os.getenv("SKINLAB_OVERLAP_FLOOR", "1e-13"))
SPECTRUM_TOL = float(os.getenv("SKINLAB_SPECTRUM_TOL", "1e-8"))

INTEGRATOR_RTOL = float(os.getenv("SKINLAB_INTEGRATOR_RTOL", "1e-9"))
INTEGRATOR_ATOL = float(os.getenv("SKINLAB_INTEGRATOR_ATOL", "1e-12"))

KRYLOV_SIGMA = float(os.getenv("SKINLAB_KRYLOV_SIGMA", "1e-3"))
KRYLOV_NEV = int(os.getenv("SKINLAB_KRYLOV_NEV", "8"))
KRYLOV_ILU_DROP_TOL = float(os.getenv("SKINLAB_KRYLOV_ILU_DROP_TOL", "1e-5"))
KRYLOV_ILU_FILL = float(os.getenv("SKINLAB_KRYLOV_ILU_FILL", "20"))
KRYLOV_SOLVE_RTOL = float(os.getenv("SKINLAB_KRYLOV_SOLVE_RTOL", "1e-10"))
KRYLOV_GMRES_RESTART = int(os.getenv("SKINLAB_KRYLOV_GMRES_RESTART", "60"))
KRYLOV_GMRES_MAXITER = int(os.getenv("SKINLAB_KRYLOV_GMRES_MAXITER", "200"))

OUTPUT_DIR = os.getenv("SKINLAB_OUTPUT_DIR", ".").strip() or "."
JOBS = int(os.getenv("SKINLAB_JOBS", "0"))
LOG_LEVEL = os.getenv("SKINLAB_LOG_LEVEL", "WARNING").strip().upper()


def effective_jobs(requested: int | None = None) -> int:
    n = JOBS if requested is None else requested
    if n <= 0:
        n = os.cpu_count() or 1
    return max(1, n)
