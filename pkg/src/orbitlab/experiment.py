"""Validation and execution of a configured experiment, with artifact output"""

from __future__ import annotations

from collections.abc import Sequence
import csv
from dataclasses import dataclass, field
from functools import partial
import json
from pathlib import Path
from typing import Any

import anyio

from .action import (
    CutoffProfile,
    LevelParameter,
    ModifiedHamiltonian,
    check_q,
    outer_radius,
)
from .config import (
    ConvergenceSweepExperiment,
    ExperimentConfig,
    FindOrbitExperiment,
    LevelSequenceExperiment,
    OutputFormat,
    SpectrumExperiment,
)
from .errors import ConfigError, OrbitlabError, UnconvergedError
from .logging import log
from .minimax import choose_parameters, spectral_q_check
from .orbits import OrbitResult, find_orbit, level_sequence_experiment
from .rescale import convergence_sweep, loglog_slope, spectrum_grid
from .util import quantify


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    #: Derived parameters per ``ε``
    ledger: list[dict[str, Any]] = field(default_factory=list)
    epsilon_max: float | None = None
    q_margin: float | None = None

    def __bool__(self) -> bool:
        return not self.violations

    def get_summary(self) -> str:
        if not self.violations:
            return "Configuration OK"
        return f"{quantify(len(self.violations), 'violation')}: " + "; ".join(
            self.violations
        )

    def check(self) -> None:
        if self.violations:
            raise ConfigError(f"Invalid configuration: {'; '.join(self.violations)}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "ok": bool(self),
            "violations": self.violations,
            "epsilon_max": self.epsilon_max,
            "q_resonance_margin": self.q_margin,
            "ledger": self.ledger,
        }


def _ledger_entry(
    cfg: ExperimentConfig, epsilon: float
) -> tuple[dict[str, Any], list[str]]:
    system = cfg.system.system
    params = cfg.profile_parameters
    level = LevelParameter.build(
        system, cfg.system.m, epsilon, params.collar_width, params.gauge
    )
    profile = CutoffProfile.from_gamma(
        epsilon, params.q, outer_radius(level), params.r_factor, params.b_factor
    )
    entry: dict[str, Any] = {"epsilon": epsilon, **profile.to_dict()}
    problems = [f"ε = {epsilon:g}: {p}" for p in profile.violations()]
    if not problems:
        linking = choose_parameters(
            ModifiedHamiltonian(level=level, profile=profile), cfg.search_settings
        )
        entry.update(linking.to_dict())
    return entry, problems


def validate(cfg: ExperimentConfig) -> ValidationReport:
    """
    Checks the physics windows a run depends on without running it; problems
    are collected rather than raised
    """
    report = ValidationReport()
    try:
        system = cfg.system.system
    except ConfigError as e:
        report.violations.append(str(e))
        return report
    report.violations.extend(system.check(seed=cfg.seed))
    try:
        check_q(cfg.profile.q, system.n, system.l)
        report.q_margin = spectral_q_check(
            cfg.discretization.K, cfg.profile.q
        ).margin
    except ConfigError as e:
        report.violations.append(str(e))
    try:
        eps_max = report.epsilon_max = cfg.system.epsilon_max()
    except OrbitlabError as e:
        report.violations.append(str(e))
        return report
    for eps in cfg.experiment.epsilons:
        if not eps < eps_max:
            report.violations.append(
                f"ε = {eps:g} is not below the chart bound ε_max = {eps_max:.6g}"
            )
    if report.violations:
        return report
    if isinstance(cfg.experiment, (FindOrbitExperiment, LevelSequenceExperiment)):
        for eps in cfg.experiment.epsilons:
            try:
                entry, problems = _ledger_entry(cfg, eps)
            except OrbitlabError as e:
                report.violations.append(f"ε = {eps:g}: {e}")
            else:
                report.ledger.append(entry)
                report.violations.extend(problems)
    for entry in report.ledger:
        derived = ", ".join(
            f"{k}={v:.6g}"
            for k, v in sorted(entry.items())
            if k != "epsilon" and isinstance(v, float)
        )
        log.info("ε=%g: %s", entry["epsilon"], derived)
    return report


def write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")
    log.debug("Wrote %s", path)


def write_csv(
    path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]
) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    log.debug("Wrote %s", path)


def _orbit_stem(epsilon: float) -> str:
    return f"orbit-eps{epsilon:.6g}"


def _trace_name(epsilon: float) -> str:
    return f"trace-eps{epsilon:.6g}.csv"


class Runner:
    def __init__(self, cfg: ExperimentConfig) -> None:
        self.cfg = cfg
        self.outdir = cfg.output_dir

    def emit_json(self, name: str, data: Any) -> None:
        if self.cfg.wants(OutputFormat.JSON):
            write_json(self.outdir / name, data)

    def emit_csv(
        self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]
    ) -> None:
        if self.cfg.wants(OutputFormat.CSV):
            write_csv(self.outdir / name, header, rows)

    def emit_orbit(self, result: OrbitResult) -> None:
        stem = _orbit_stem(result.epsilon)
        self.emit_csv(
            f"{stem}.csv", result.orbit.csv_header(), result.orbit.csv_rows()
        )
        self.emit_json(f"{stem}.json", result.to_dict())
        self.emit_csv(
            _trace_name(result.epsilon),
            ["t", "sup_value", "front_size"],
            result.search.trace_rows(),
        )

    def spectrum(self, resolution: int) -> dict[str, Any]:
        system = self.cfg.system.system
        spectra = spectrum_grid(system, resolution)
        header = [
            *(f"x{i + 1}" for i in range(2 * system.l)),
            *(f"a{i + 1}" for i in range(system.n - system.l)),
        ]
        self.emit_csv("spectrum.csv", header, [s.as_row() for s in spectra])
        values = [v for s in spectra for v in s.values]
        summary = {
            "kind": "spectrum",
            "resolution": resolution,
            "points": len(spectra),
            "min": min(values),
            "max": max(values),
        }
        self.emit_json("summary.json", summary)
        return summary

    async def find_orbit(self, epsilon: float) -> dict[str, Any]:
        cfg = self.cfg
        func = partial(
            find_orbit,
            cfg.system.system,
            epsilon,
            cfg.system.m,
            profile=cfg.profile_parameters,
            settings=cfg.search_settings,
            integrator=cfg.integrator_settings,
            n_samples=cfg.discretization.n_samples,
        )
        result = await anyio.to_thread.run_sync(func)
        self.emit_orbit(result)
        summary = {"kind": "find-orbit", **result.to_dict()}
        self.emit_json("summary.json", summary)
        return summary

    async def level_sequence(self, epsilons: list[float]) -> dict[str, Any]:
        cfg = self.cfg
        report = await level_sequence_experiment(
            cfg.system.system,
            epsilons,
            cfg.system.m,
            profile=cfg.profile_parameters,
            settings=cfg.search_settings,
            integrator=cfg.integrator_settings,
            n_samples=cfg.discretization.n_samples,
            workers=cfg.workers,
        )
        for result in report.orbits:
            self.emit_orbit(result)
        summary = {"kind": "level-sequence", **report.to_dict()}
        self.emit_json("summary.json", summary)
        if not report:
            raise UnconvergedError(
                f"no level of {quantify(len(epsilons), 'level')} yielded a"
                " verified orbit"
            )
        return summary

    def convergence(self, exp: ConvergenceSweepExperiment) -> dict[str, Any]:
        cfg = self.cfg
        deviations = convergence_sweep(
            cfg.system.system, cfg.system.m, exp.epsilons, exp.samples, cfg.seed
        )
        slope = loglog_slope(exp.epsilons, deviations)
        self.emit_csv(
            "convergence.csv",
            ["epsilon", "deviation"],
            list(zip(exp.epsilons, deviations)),
        )
        summary = {
            "kind": "convergence-sweep",
            "epsilons": exp.epsilons,
            "deviations": deviations,
            "slope": slope,
        }
        log.info("Convergence sweep: log-log slope %.4f", slope)
        self.emit_json("summary.json", summary)
        return summary


async def run(cfg: ExperimentConfig) -> dict[str, Any]:
    """Validates, then runs the configured experiment and writes its artifacts"""
    validate(cfg).check()
    runner = Runner(cfg)
    exp = cfg.experiment
    with log.timed(f"Experiment {exp.kind}"):
        if isinstance(exp, SpectrumExperiment):
            return runner.spectrum(exp.resolution)
        elif isinstance(exp, FindOrbitExperiment):
            return await runner.find_orbit(exp.epsilon)
        elif isinstance(exp, LevelSequenceExperiment):
            return await runner.level_sequence(exp.epsilons)
        elif isinstance(exp, ConvergenceSweepExperiment):
            return runner.convergence(exp)
        else:
            raise AssertionError(f"Unhandled experiment: {exp!r}")


def run_spectrum(cfg: ExperimentConfig) -> dict[str, Any]:
    """The spectrum over the base, whatever experiment the config names"""
    resolution = (
        cfg.experiment.resolution
        if isinstance(cfg.experiment, SpectrumExperiment)
        else 16
    )
    with log.timed("Spectrum"):
        return Runner(cfg).spectrum(resolution)
