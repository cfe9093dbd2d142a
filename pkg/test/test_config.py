from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any

from conftest import ConfigFile
import numpy as np
from pydantic import ValidationError
import pytest

from orbitlab.config import (
    ExperimentConfig,
    FindOrbitExperiment,
    OutputFormat,
    SystemConfig,
)
from orbitlab.consts import OUTPUT_DIR_ENVVAR
from orbitlab.errors import ConfigError
from orbitlab.experiment import validate, write_csv, write_json
from orbitlab.geometry import Gauge
from orbitlab.systems import MagneticTorus, PointQuadratic, varying_field_torus


def make_config(**overrides: Any) -> ExperimentConfig:
    data: dict[str, Any] = {
        "system": {"kind": "point-quadratic", "frequencies": [1.0]},
        "experiment": {"kind": "find-orbit", "epsilon": 0.1},
        "discretization": {"K": 8},
        "minimax": {"capture": 1.0},
    }
    data.update(overrides)
    return ExperimentConfig.model_validate(data)


def test_load_yaml(oscillator_config: ConfigFile) -> None:
    cfg = ExperimentConfig.load_yaml(oscillator_config.write())
    assert isinstance(cfg.system.system, PointQuadratic)
    assert isinstance(cfg.experiment, FindOrbitExperiment)
    assert cfg.experiment.epsilons == [0.1]
    assert cfg.output_dir == oscillator_config.outdir
    assert cfg.workers == 2
    settings = cfg.search_settings
    assert (settings.K, settings.budget, settings.capture) == (8, 20_000, 1.0)
    assert cfg.discretization.n_samples == 64
    assert cfg.wants(OutputFormat.CSV)
    assert cfg.wants(OutputFormat.JSON)


def test_dump_yaml(tmp_path: Path) -> None:
    cfg = make_config(seed=3)
    path = tmp_path / "dumped.yaml"
    cfg.dump_yaml(path)
    assert ExperimentConfig.load_yaml(path) == cfg


def test_output_dir_override(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    cfg = make_config(output={"directory": "results"})
    assert cfg.output_dir == Path("results")
    monkeypatch.setenv(OUTPUT_DIR_ENVVAR, str(tmp_path / "elsewhere"))
    assert cfg.output_dir == tmp_path / "elsewhere"
    monkeypatch.setenv(OUTPUT_DIR_ENVVAR, "  ")
    assert cfg.output_dir == Path("results")


def test_torus_system() -> None:
    cfg = SystemConfig.model_validate(
        {
            "kind": "magnetic-torus",
            "field": {"mean": 1.0, "terms": [{"k": [1, 0], "cos": 0.3}]},
            "chart_radius": 2.0,
            "base_point": [0.5, 0.0],
            "gauge": "taylor",
        }
    )
    system = cfg.system
    assert isinstance(system, MagneticTorus)
    assert (system.n, system.l) == (2, 1)
    assert cfg.gauge is Gauge.TAYLOR
    assert np.array_equal(cfg.m, [0.5, 0.0])
    z = np.random.default_rng(0).normal(size=(5, 4))
    reference = varying_field_torus(1.0, 0.3)
    assert np.allclose(system.hamiltonian(z), reference.hamiltonian(z))
    assert np.allclose(system.symplectic_form(z), reference.symplectic_form(z))


@pytest.mark.parametrize(
    "system,match",
    [
        ({"kind": "point-quadratic"}, "needs frequencies"),
        ({"kind": "point-quadratic", "frequencies": [1.0], "n": 3}, "declared n"),
        ({"kind": "magnetic-torus"}, "needs a field"),
        (
            {"kind": "magnetic-torus", "field": {"mean": 1.0}, "n": 1, "l": 1},
            "no normal directions",
        ),
        (
            {"kind": "magnetic-torus", "field": {"mean": 1.0}, "base_point": [0.0]},
            "base point",
        ),
    ],
)
def test_bad_system(system: dict[str, Any], match: str) -> None:
    with pytest.raises(ValidationError, match=match):
        SystemConfig.model_validate(system)


@pytest.mark.parametrize(
    "overrides",
    [
        {"experiment": {"kind": "level-sequence", "epsilons": [0.05, 0.1]}},
        {"experiment": {"kind": "level-sequence", "epsilons": [0.1, -0.05]}},
        {"experiment": {"kind": "convergence-sweep", "epsilons": [0.1]}},
        {"experiment": {"kind": "find-orbit", "epsilon": 0.0}},
        {"experiment": {"kind": "sweep"}},
        {"minimax": {"dt": 1e-3, "dt_min": 1e-2}},
        {"discretization": {"K": 2}},
    ],
)
def test_bad_config(overrides: dict[str, Any]) -> None:
    with pytest.raises(ValidationError):
        make_config(**overrides)


def test_epsilon_max() -> None:
    cfg = make_config()
    assert cfg.system.epsilon_max() == pytest.approx(0.5 * np.sqrt(0.8))
    assert cfg.system.epsilon_max() == pytest.approx(0.447, abs=1e-3)


def test_validate_ok() -> None:
    report = validate(make_config())
    assert report
    report.check()
    assert report.get_summary() == "Configuration OK"
    assert report.q_margin == pytest.approx(np.pi)
    (entry,) = report.ledger
    assert entry["epsilon"] == 0.1
    assert entry["gamma"] == pytest.approx(0.1 * np.sqrt(1.25), rel=1e-9)
    assert entry["r"] == pytest.approx(1.5 * entry["gamma"])
    assert entry["boundary_sup"] <= 1e-9
    assert report.to_dict()["ok"]


@pytest.mark.parametrize(
    "overrides,match",
    [
        ({"experiment": {"kind": "find-orbit", "epsilon": 0.5}}, "chart bound"),
        ({"profile": {"b_factor": 1.2}}, "b ="),
        ({"profile": {"q": 2.0}}, "even integer"),
        ({"profile": {"q": 1.5}}, "must exceed"),
    ],
)
def test_validate_violations(overrides: dict[str, Any], match: str) -> None:
    report = validate(make_config(**overrides))
    assert not report
    assert any(match in v for v in report.violations)
    assert not report.to_dict()["ok"]
    with pytest.raises(ConfigError, match="Invalid configuration"):
        report.check()


def test_validate_level_sequence() -> None:
    cfg = make_config(
        experiment={"kind": "level-sequence", "epsilons": [0.2, 0.1, 0.05]}
    )
    report = validate(cfg)
    assert report
    assert [e["epsilon"] for e in report.ledger] == [0.2, 0.1, 0.05]
    gammas = [e["gamma"] for e in report.ledger]
    assert all(b < a for a, b in zip(gammas, gammas[1:]))


def test_writers(tmp_path: Path) -> None:
    write_csv(tmp_path / "sub" / "table.csv", ["a", "b"], [[0.1, 2], [1 / 3, 4]])
    with (tmp_path / "sub" / "table.csv").open(newline="") as fp:
        rows = list(csv.reader(fp))
    assert rows == [["a", "b"], ["0.1", "2"], [repr(1 / 3), "4"]]
    write_json(tmp_path / "data.json", {"b": [1.5], "a": "x"})
    text = (tmp_path / "data.json").read_text()
    assert json.loads(text) == {"a": "x", "b": [1.5]}
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("\n")
