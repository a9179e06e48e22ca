from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Callable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from skinlab import settings
from skinlab.control.scan import (
    all_failed,
    loglog_slope,
    parse_float_list,
    parse_int_list,
    scan_gap,
    scan_relaxation,
)
from skinlab.core.dynamics import (
    default_t_max,
    default_time_grid,
    detect_anomalous_relaxation,
    evolve,
    initial_state,
    relaxation_time,
    steady_localization_length,
)
from skinlab.core.model import Basis, DensityMatrix, ModelSpec, density
from skinlab.core.perturb import first_order_spectrum, matched_pair_distance
from skinlab.core.steady import (
    analytic_steady_feedback_pbc,
    analytic_steady_nofeedback,
    diagonal_profile,
    fit_localization_length,
    numeric_steady,
    trace_distance,
)
from skinlab.core.superop import full_spectrum, mode_magnitudes, vectorize_liouvillian
from skinlab.errors import FitError, ModelError, SkinlabError
from skinlab.io.dumps import (
    CutoffDump,
    ErrorResponse,
    FitDump,
    RelaxationDump,
    SteadyDump,
    spectrum_dump,
    read_matrix,
    write_evolution,
    write_gap_scan,
    write_manifest,
    write_matrix,
    write_mode_magnitudes,
    write_profile,
    write_report,
    write_scan,
    write_spectrum,
    write_steady,
    write_table,
    write_trajectories,
)
from skinlab.manybody.sector import sector_basis
from skinlab.manybody.spectrum import density_profile, evolve_sector, manybody_spectrum, maximally_mixed_sector
from skinlab.manybody.trajectories import domain_wall_state, run_trajectories

logger = logging.getLogger(__name__)

INIT_NAMES = ("lastsite", "firstsite", "uniform", "domainwall")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: Literal["feedback", "measure"] = "feedback"
    bc: Literal["obc", "pbc"] = "obc"
    L: int = Field(default=20, ge=2, le=100_000)
    gamma: float = Field(default=1.0, ge=0.0)
    t: float = Field(default=1.0, gt=0.0)
    N: Optional[int] = Field(default=None, ge=1)
    precision: str = Field(default="double", pattern=r"^(double|extended(:\d+)?)$")
    seed: int = Field(default=0, ge=0)
    output: Optional[str] = None
    format: Literal["csv", "json"] = "json"
    jobs: Optional[int] = Field(default=None, ge=0)

    init: Optional[str] = None
    init_file: Optional[str] = None
    threshold: float = Field(default=0.01, gt=0.0, lt=1.0)
    t_max: Optional[float] = Field(default=None, gt=0.0)
    all_sites: bool = False

    Ls: Optional[str] = None
    gammas: Optional[str] = None
    quantity: Literal["tau", "gap"] = "tau"

    solver: Literal["dense", "krylov"] = "dense"
    nev: Optional[int] = Field(default=None, ge=1)
    modes: int = Field(default=0, ge=0)
    strict: bool = False

    order: int = Field(default=1, ge=0, le=2)
    compare: bool = False

    source: Literal["numeric", "analytic"] = "numeric"

    ntraj: int = Field(default=100, ge=1, le=1_000_000)
    dt: float = Field(default=0.01, gt=0.0)
    sample_dt: Optional[float] = Field(default=None, gt=0.0)

    def spec(self) -> ModelSpec:
        return ModelSpec(L=self.L, bc=self.bc, gamma=self.gamma, t=self.t, feedback=self.model == "feedback")


def _base(cfg: RunConfig, command: str) -> Path:
    if cfg.output:
        return Path(cfg.output)
    if command == "scan":
        name = f"scan_{cfg.model}_{cfg.bc}"
    else:
        name = f"{command}_{cfg.model}_{cfg.bc}_L{cfg.L}_g{cfg.gamma:g}"
        if cfg.N is not None:
            name += f"_N{cfg.N}"
    return Path(settings.OUTPUT_DIR) / name


def _with_suffix(base: Path, tail: str) -> Path:
    return base.with_name(base.name + tail)


def _eigen_table(path: Path, eigenvalues: np.ndarray) -> Path:
    return write_table(path, ("re", "im"), [(float(z.real), float(z.imag)) for z in eigenvalues])


def cmd_spectrum(cfg: RunConfig) -> tuple[int, list[Path]]:
    spec = cfg.spec()
    if cfg.N is not None:
        spectrum = manybody_spectrum(spec, cfg.N, solver=cfg.solver, nev=cfg.nev, precision=cfg.precision)
    else:
        spectrum = full_spectrum(vectorize_liouvillian(spec), cfg.precision, strict=cfg.strict)
    base = _base(cfg, "spectrum")
    if cfg.format == "csv":
        out = [_eigen_table(_with_suffix(base, ".csv"), spectrum.eigenvalues)]
    else:
        dump = spectrum_dump(
            spec,
            spectrum.eigenvalues,
            precision=spectrum.precision,
            gap=spectrum.gap,
            zero_mode_count=spectrum.zero_mode_count,
            N=cfg.N,
        )
        out = [write_spectrum(_with_suffix(base, ".json"), dump)]
    if cfg.modes:
        idx = range(min(cfg.modes, len(spectrum)))
        maps = dict(zip(idx, mode_magnitudes(spectrum, idx)))
        out.append(write_mode_magnitudes(_with_suffix(base, "_modes.csv"), maps))
    return 0, out


def _sector_rho0(cfg: RunConfig, init: str) -> DensityMatrix:
    L, N = cfg.L, cfg.N
    if init == "domainwall":
        psi = domain_wall_state(sector_basis(L, N))
        return DensityMatrix(entries=np.outer(psi, psi.conj()), basis=Basis("sector", L, N))
    if init == "uniform":
        return maximally_mixed_sector(L, N)
    raise ModelError(f"initial state {init!r} is not defined in a particle-number sector", op="cmd_relax")


def _rho0(cfg: RunConfig) -> DensityMatrix:
    if cfg.init_file:
        entries = read_matrix(cfg.init_file)
        basis = Basis("sector", cfg.L, cfg.N) if cfg.N is not None else Basis("site", cfg.L)
        return density(entries, basis)
    if cfg.N is not None:
        return _sector_rho0(cfg, cfg.init or "domainwall")
    init = cfg.init or "lastsite"
    if init == "domainwall":
        raise ModelError("domainwall needs a particle-number sector (--N)", op="cmd_relax")
    return initial_state(cfg.spec(), init)


def cmd_relax(cfg: RunConfig) -> tuple[int, list[Path]]:
    spec = cfg.spec()
    rho0 = _rho0(cfg)
    spectrum = None
    gap = None
    if cfg.N is not None:
        try:
            gap = manybody_spectrum(spec, cfg.N).gap
        except SkinlabError as exc:
            logger.warning("no dense sector gap: %s", exc.message)
        times = default_time_grid(cfg.t_max or default_t_max(spec, gap))
        result = evolve_sector(spec, cfg.N, rho0, times)
    else:
        if spec.L * spec.L <= settings.DENSE_DIM_CAP:
            spectrum = full_spectrum(vectorize_liouvillian(spec), cfg.precision)
            gap = spectrum.gap
        times = default_time_grid(cfg.t_max or default_t_max(spec, gap))
        result = evolve(spec, rho0, times, spectrum=spectrum)

    base = _base(cfg, "relax")
    out = [write_evolution(_with_suffix(base, "_evolution.csv"), result, all_sites=cfg.all_sites)]
    report = relaxation_time(result, cfg.threshold)
    cls = None
    loc_length = steady_localization_length(spec, spectrum) if spectrum is not None else None
    if gap is not None and gap > 0:
        cls = detect_anomalous_relaxation(report, gap, spec, loc_length)
    dump = RelaxationDump(
        L=spec.L,
        gamma=spec.gamma,
        bc=spec.bc,
        model=spec.label,
        init="file" if cfg.init_file else (cfg.init or ("domainwall" if cfg.N else "lastsite")),
        tau=report.tau,
        threshold=report.threshold,
        gap=gap if gap is not None and gap == gap else None,
        tau_times_gap=report.tau * gap if gap is not None and gap == gap else None,
        classification=cls.label if cls else None,
        normalized_tau_gap=cls.normalized if cls else None,
        loc_length=loc_length,
        predicted_tau=cls.predicted_tau if cls else None,
        fit_ratio=cls.fit_ratio if cls else None,
        cutoff=CutoffDump(t_start=report.cutoff.t_start, plateau_level=report.cutoff.plateau_level)
        if report.cutoff
        else None,
        asymptotic_rate=report.asymptotic_rate,
        N=cfg.N,
    )
    out.append(write_report(_with_suffix(base, "_report.json"), dump))
    return 0, out


def cmd_scan(cfg: RunConfig) -> tuple[int, list[Path]]:
    template = cfg.spec()
    Ls = parse_int_list(cfg.Ls or str(cfg.L))
    gammas = parse_float_list(cfg.gammas or repr(cfg.gamma))
    path = _with_suffix(_base(cfg, "scan"), ".csv")
    if cfg.quantity == "gap":
        rows = scan_gap(template, Ls, gammas, jobs=cfg.jobs)
        out = write_gap_scan(path, rows)
    else:
        rows = scan_relaxation(template, Ls, gammas, init=cfg.init or "lastsite", threshold=cfg.threshold, jobs=cfg.jobs)
        out = write_scan(path, rows)
        good = [r for r in rows if r.ok]
        if len({r.L for r in good}) >= 2 and len(gammas) == 1:
            try:
                logger.info("tau ~ L^%.3f", loglog_slope([r.L for r in good], [r.tau for r in good]))
            except FitError as exc:
                logger.info("no tau slope: %s", exc.message)
    return (1 if all_failed(rows) else 0), [out]


def _steady_states(cfg: RunConfig):
    spec = cfg.spec()
    if cfg.source == "analytic":
        if cfg.N is not None:
            raise ModelError("analytic steady states are single-particle only", op="cmd_steady")
        if not spec.feedback:
            return analytic_steady_nofeedback(spec), None
        return [analytic_steady_feedback_pbc(spec)], None
    if cfg.N is not None:
        spectrum = manybody_spectrum(spec, cfg.N, precision=cfg.precision)
        return numeric_steady(spectrum), sector_basis(cfg.L, cfg.N)
    return numeric_steady(full_spectrum(vectorize_liouvillian(spec), cfg.precision)), None


def cmd_steady(cfg: RunConfig) -> tuple[int, list[Path]]:
    spec = cfg.spec()
    states, sector = _steady_states(cfg)
    base = _base(cfg, "steady")
    out: list[Path] = []
    names: list[str] = []
    for i, rho in enumerate(states):
        p = write_matrix(_with_suffix(base, f"_state{i}.csv"), rho.entries)
        profile = density_profile(rho.entries, sector) if sector is not None else diagonal_profile(rho.entries)
        out += [p, write_profile(_with_suffix(base, f"_diag{i}.csv"), profile)]
        names.append(p.name)

    fit = None
    if spec.bc == "obc" and sector is None:
        try:
            f = fit_localization_length(states[0], spec=spec)
            fit = FitDump(
                loc_length=f.loc_length,
                fit_range=f.fit_range,
                residual=f.residual,
                theory_length=f.theory_length,
                rejected=f.rejected,
            )
        except FitError as exc:
            logger.warning("no localization fit: %s", exc.message)

    distance = None
    if cfg.source == "numeric" and sector is None and spec.bc == "pbc" and spec.feedback and len(states) == 1:
        distance = trace_distance(states[0].entries, analytic_steady_feedback_pbc(spec).entries)

    dump = SteadyDump(
        L=spec.L,
        gamma=spec.gamma,
        bc=spec.bc,
        model=spec.label,
        source=cfg.source,
        states=names,
        fit=fit,
        trace_distance=distance,
    )
    out.insert(0, write_steady(_with_suffix(base, ".json"), dump))
    return 0, out


def cmd_perturb(cfg: RunConfig) -> tuple[int, list[Path]]:
    spec = cfg.spec()
    ps = first_order_spectrum(spec, order=cfg.order)
    base = _base(cfg, "perturb")
    if cfg.format == "csv":
        return 0, [_eigen_table(_with_suffix(base, ".csv"), ps.eigenvalues)]
    dump = spectrum_dump(spec, ps.eigenvalues, precision="perturbative", order=ps.order)
    if cfg.compare:
        exact = full_spectrum(vectorize_liouvillian(spec), cfg.precision)
        dump.max_distance = matched_pair_distance(ps.eigenvalues, exact.eigenvalues).max_distance
    return 0, [write_spectrum(_with_suffix(base, ".json"), dump)]


def cmd_traj(cfg: RunConfig) -> tuple[int, list[Path]]:
    spec = cfg.spec()
    N = cfg.N if cfg.N is not None else cfg.L // 2
    if cfg.init not in (None, "domainwall"):
        raise ModelError("trajectories start from the domain-wall state", op="cmd_traj")
    ensemble = run_trajectories(
        spec,
        N,
        t_max=cfg.t_max or 10.0,
        dt=cfg.dt,
        n_traj=cfg.ntraj,
        base_seed=cfg.seed,
        sample_dt=cfg.sample_dt,
        jobs=cfg.jobs,
    )
    base = _base(cfg.model_copy(update={"N": N}), "traj")
    return 0, [write_trajectories(_with_suffix(base, ".csv"), ensemble)]


COMMANDS: dict[str, Callable[[RunConfig], tuple[int, list[Path]]]] = {
    "spectrum": cmd_spectrum,
    "relax": cmd_relax,
    "scan": cmd_scan,
    "steady": cmd_steady,
    "perturb": cmd_perturb,
    "traj": cmd_traj,
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with run configuration; flags override it.")
    p.add_argument("--model", choices=["feedback", "measure"])
    p.add_argument("--bc", choices=["obc", "pbc"])
    p.add_argument("--L", help="Lattice size (scan: list or start:stop:step).")
    p.add_argument("--gamma", help="Measurement rate (scan: list or start:stop:step).")
    p.add_argument("--t", type=float, help="Hopping amplitude.")
    p.add_argument("--N", type=int, help="Particle number; selects the many-body sector.")
    p.add_argument("--precision", help="double or extended[:digits].")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="Output path stem (default: SKINLAB_OUTPUT_DIR).")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--jobs", type=int, help="Worker-pool width (0 = all cores).")
    p.add_argument("--log-level", default=None, help="Logging level (default: SKINLAB_LOG_LEVEL).")


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skinlab", description="Monitored free-fermion Lindbladian laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="Liouvillian spectrum and eigenmodes.")
    _common(p)
    p.add_argument("--solver", choices=["dense", "krylov"])
    p.add_argument("--nev", type=int)
    p.add_argument("--modes", type=int, help="Dump |rho_i| for the first MODES eigenmodes.")
    p.add_argument("--strict", action="store_true", default=None)

    for name, text in (("relax", "Relaxation from an initial state."), ("scan", "Relaxation or gap scan over L and gamma.")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--init", help="lastsite, firstsite, uniform or domainwall.")
        p.add_argument("--init-file", dest="init_file", help="CSV (row, col, re, im) initial density matrix.")
        p.add_argument("--threshold", type=float)
        p.add_argument("--t-max", dest="t_max", type=float)
        if name == "relax":
            p.add_argument("--all-sites", dest="all_sites", action="store_true", default=None)
        else:
            p.add_argument("--quantity", choices=["tau", "gap"])

    p = sub.add_parser("steady", help="Steady states and localization fit.")
    _common(p)
    p.add_argument("--source", choices=["numeric", "analytic"])

    p = sub.add_parser("perturb", help="Perturbative spectrum in gamma.")
    _common(p)
    p.add_argument("--order", type=int)
    p.add_argument("--compare", action="store_true", default=None, help="Report distance to the exact spectrum.")

    p = sub.add_parser("traj", help="Quantum-jump trajectories in a sector.")
    _common(p)
    p.add_argument("--init", help="domainwall.")
    p.add_argument("--ntraj", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--sample-dt", dest="sample_dt", type=float)
    return parser


_NOT_CONFIG = {"command", "config", "log_level"}


def load_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ModelError(f"cannot read config {args.config}: {exc}", op="load_config") from exc
        if not isinstance(data, dict):
            raise ModelError("config file must hold a JSON object", op="load_config")
    for key, value in vars(args).items():
        if key in _NOT_CONFIG or value is None:
            continue
        data[key] = value
    if args.command == "scan":
        for one, many in (("L", "Ls"), ("gamma", "gammas")):
            if one in data and isinstance(data[one], str) and any(c in data[one] for c in ",:"):
                data[many] = data.pop(one)
    return RunConfig.model_validate(data)


def configure_logging(level: Optional[str]) -> None:
    name = (level or settings.LOG_LEVEL).upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload) + "\n")


def main(argv: Optional[list[str]] = None) -> int:
    args = build_arg_parser().parse_args(argv)
    configure_logging(args.log_level)
    started = time.time()
    try:
        cfg = load_config(args)
        status, outputs = COMMANDS[args.command](cfg)
    except ValidationError as exc:
        first = exc.errors()[0] if exc.errors() else {}
        loc = ".".join(str(x) for x in first.get("loc", ()))
        msg = f"{loc}: {first.get('msg', str(exc))}" if loc else str(exc)
        _emit(ErrorResponse(code="validation_error", message=msg, op="config").model_dump())
        return 2
    except SkinlabError as exc:
        d = exc.detail()
        _emit(ErrorResponse(code=d["code"], message=d["message"], op=d["op"] or args.command).model_dump())
        return 2
    if outputs:
        write_manifest(outputs[0], args.command, cfg.model_dump(), started, time.time(), outputs)
    _emit({"ok": status == 0, "command": args.command, "outputs": [str(p) for p in outputs]})
    return status


if __name__ == "__main__":
    sys.exit(main())
