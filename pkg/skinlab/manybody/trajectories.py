"""Quantum-jump unraveling in a particle-number sector.

Between jumps the unnormalized state follows ``d psi/dt = -i H_eff psi`` with a
fixed-step fourth-order propagator. A jump fires when ``||psi||^2`` drops below
a uniform random threshold (waiting-time algorithm); channel ``mu`` is chosen
with probability proportional to ``||L_mu psi||^2``.

Trajectory ``i`` draws from ``SeedSequence(base_seed, spawn_key=(i,))``, so an
ensemble is reproducible for a fixed ``(base_seed, n_traj)`` whatever the
scheduling.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from skinlab import settings
from skinlab.control.pool import pairwise_reduce, run_tasks_sync
from skinlab.core.dynamics import EvolutionResult
from skinlab.core.model import ModelSpec
from skinlab.errors import DimensionCapError, ModelError, SkinlabError
from skinlab.manybody.sector import SectorBasis, build_sector_operators

logger = logging.getLogger(__name__)

STEP_PROBABILITY_LIMIT = 0.1


def domain_wall_state(basis: SectorBasis) -> np.ndarray:
    """|0...01...1>: the rightmost N sites filled."""
    mask = sum(1 << s for s in range(basis.L - basis.N, basis.L))
    psi = np.zeros(basis.dim, dtype=complex)
    psi[basis.index[mask]] = 1.0
    return psi


@dataclass(frozen=True)
class _Context:
    h_eff: sp.csr_matrix
    jumps: tuple[sp.csr_matrix, ...]
    occ: np.ndarray
    psi0: np.ndarray
    dt: float
    n_steps: int
    sample_every: int
    gamma: float
    base_seed: int


@dataclass
class TrajectoryRecord:
    densities: np.ndarray
    jumps: int
    max_step_probability: float


def _propagate(a: sp.csr_matrix, psi: np.ndarray) -> np.ndarray:
    # fourth-order Taylor step of exp(a) psi, identical to classic RK4 for linear flows
    out = psi.copy()
    term = psi
    for n in range(1, 5):
        term = (a @ term) / n
        out = out + term
    return out


def _one_trajectory(ctx: _Context, i: int) -> TrajectoryRecord:
    rng = np.random.default_rng(np.random.SeedSequence(ctx.base_seed, spawn_key=(i,)))
    a = (-1j * ctx.dt) * ctx.h_eff
    psi = ctx.psi0.copy()
    n_samples = ctx.n_steps // ctx.sample_every + 1
    dens = np.empty((n_samples, ctx.occ.shape[1]))
    prob = np.abs(psi) ** 2
    dens[0] = prob @ ctx.occ / prob.sum()
    threshold = rng.random()
    jumps = 0
    worst = 0.0
    monitored = ctx.gamma > 0
    for step in range(1, ctx.n_steps + 1):
        before = float(np.vdot(psi, psi).real)
        psi = _propagate(a, psi)
        norm2 = float(np.vdot(psi, psi).real)
        if monitored:
            worst = max(worst, 1.0 - norm2 / before)
            if norm2 < threshold:
                weights = np.array([float(np.vdot(v, v).real) for v in (m @ psi for m in ctx.jumps)])
                total = weights.sum()
                if total > 0:
                    mu = int(rng.choice(len(ctx.jumps), p=weights / total))
                    psi = ctx.jumps[mu] @ psi
                    psi = psi / math.sqrt(weights[mu])
                    jumps += 1
                threshold = rng.random()
        else:
            psi = psi / math.sqrt(norm2)
        if step % ctx.sample_every == 0:
            prob = np.abs(psi) ** 2
            dens[step // ctx.sample_every] = prob @ ctx.occ / prob.sum()
    return TrajectoryRecord(densities=dens, jumps=jumps, max_step_probability=worst)


@dataclass
class TrajectoryEnsemble:
    L: int
    N: int
    n_traj: int
    base_seed: int
    dt: float
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    jump_counts: np.ndarray
    max_step_probability: float = 0.0

    @property
    def total_density(self) -> np.ndarray:
        return self.mean.sum(axis=1)


def run_trajectories(
    spec: ModelSpec,
    N: int,
    psi0: Optional[np.ndarray] = None,
    t_max: float = 10.0,
    dt: float = 0.01,
    n_traj: int = 100,
    base_seed: int = 0,
    sample_dt: Optional[float] = None,
    jobs: Optional[int] = None,
) -> TrajectoryEnsemble:
    if n_traj < 1:
        raise ModelError("n_traj must be positive", op="run_trajectories")
    if dt <= 0 or t_max <= 0:
        raise ModelError("dt and t_max must be positive", op="run_trajectories")
    dim = math.comb(spec.L, N)
    if dim > settings.SECTOR_TRAJ_CAP:
        raise DimensionCapError(
            f"sector dimension {dim} exceeds trajectory cap {settings.SECTOR_TRAJ_CAP}",
            op="run_trajectories",
            dim=dim,
            cap=settings.SECTOR_TRAJ_CAP,
        )
    ops = build_sector_operators(spec, N, dense=False)
    if psi0 is None:
        psi0 = domain_wall_state(ops.basis)
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (dim,):
        raise ModelError(f"psi0 has shape {psi0.shape}, expected ({dim},)", op="run_trajectories")
    psi0 = psi0 / np.linalg.norm(psi0)

    n_steps = int(round(t_max / dt))
    sample_every = max(1, int(round((sample_dt or dt) / dt)))
    n_steps -= n_steps % sample_every
    ctx = _Context(
        h_eff=sp.csr_matrix(ops.effective_hamiltonian),
        jumps=tuple(sp.csr_matrix(m) for m in ops.jumps),
        occ=ops.basis.occupations(),
        psi0=psi0,
        dt=dt,
        n_steps=n_steps,
        sample_every=sample_every,
        gamma=spec.gamma,
        base_seed=base_seed,
    )
    logger.debug("trajectories L=%d N=%d dim=%d steps=%d n_traj=%d", spec.L, N, dim, n_steps, n_traj)

    outcomes = run_tasks_sync(lambda i: _one_trajectory(ctx, i), range(n_traj), jobs=jobs, op="trajectory")
    failed = [o for o in outcomes if not o.ok]
    if failed:
        raise SkinlabError(f"{len(failed)} of {n_traj} trajectories failed", op="run_trajectories", first=failed[0].error)
    records = [o.value for o in outcomes]

    partial = [(1, r.densities, r.densities**2) for r in records]
    n, total, total_sq = pairwise_reduce(partial, lambda x, y: (x[0] + y[0], x[1] + y[1], x[2] + y[2]))
    mean = total / n
    if n > 1:
        var = np.clip((total_sq - n * mean**2) / (n - 1), 0.0, None)
        stderr = np.sqrt(var / n)
    else:
        stderr = np.zeros_like(mean)

    worst = max(r.max_step_probability for r in records)
    if worst > STEP_PROBABILITY_LIMIT:
        logger.warning("per-step jump probability reached %.3f (dt=%g too large)", worst, dt)

    times = np.arange(mean.shape[0]) * sample_every * dt
    return TrajectoryEnsemble(
        L=spec.L,
        N=N,
        n_traj=n_traj,
        base_seed=base_seed,
        dt=dt,
        times=times,
        mean=mean,
        stderr=stderr,
        jump_counts=np.array([r.jumps for r in records]),
        max_step_probability=worst,
    )


@dataclass
class ImbalanceSeries:
    times: np.ndarray
    eta: np.ndarray
    left_sites: int

    def steady(self, tail_fraction: float = 0.2) -> float:
        n = max(1, int(round(tail_fraction * self.eta.shape[0])))
        return float(np.mean(self.eta[-n:]))


def left_size(L: int) -> int:
    # odd L: middle site counts as left
    return (L + 1) // 2


def imbalance(
    source: Union[TrajectoryEnsemble, EvolutionResult, np.ndarray],
    times: Optional[np.ndarray] = None,
) -> ImbalanceSeries:
    if isinstance(source, TrajectoryEnsemble):
        profile, times = source.mean, source.times
    elif isinstance(source, EvolutionResult):
        profile, times = source.observables, source.times
    else:
        profile = np.atleast_2d(np.asarray(source, dtype=float))
        if times is None:
            times = np.arange(profile.shape[0], dtype=float)
    L = profile.shape[1]
    half = left_size(L)
    left = profile[:, :half].sum(axis=1)
    right = profile[:, half:].sum(axis=1)
    total = left + right
    eta = np.where(total > 0, (left - right) / np.where(total > 0, total, 1.0), 0.0)
    return ImbalanceSeries(times=np.asarray(times, dtype=float), eta=eta, left_sites=half)
