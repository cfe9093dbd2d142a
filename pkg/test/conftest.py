from __future__ import annotations

from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Any

import pytest

from orbitlab.consts import OUTPUT_DIR_ENVVAR
from orbitlab.minimax import SearchSettings
from orbitlab.systems import (
    MagneticTorus,
    PointQuadratic,
    constant_field_torus,
    harmonic_oscillator,
    varying_field_torus,
)
from orbitlab.util import yaml_dump

#: Search settings small enough for the test suite: the orbits of the
#: built-in systems are (nearly) single-mode loops, so low orders suffice
FAST_SEARCH = SearchSettings(K=8, budget=20_000, capture=1.0)


@pytest.fixture
def anyio_backend() -> str:
    return "asyncio"


@pytest.fixture(autouse=True)
def capture_all_logs(caplog: pytest.LogCaptureFixture) -> None:
    caplog.set_level(5, logger="orbitlab")
    caplog.set_level(logging.DEBUG, logger="test_orbitlab")


@pytest.fixture(autouse=True)
def no_output_override(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv(OUTPUT_DIR_ENVVAR, raising=False)


@pytest.fixture
def oscillator() -> PointQuadratic:
    return harmonic_oscillator()


@pytest.fixture
def larmor_torus() -> MagneticTorus:
    return constant_field_torus(1.0, chart_radius=2.0)


@pytest.fixture
def varying_torus() -> MagneticTorus:
    return varying_field_torus(1.0, 0.3, chart_radius=2.0)


@dataclass
class ConfigFile:
    """An experiment configuration written to disk for the CLI"""

    path: Path
    system: dict[str, Any]
    experiment: dict[str, Any]
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def outdir(self) -> Path:
        return self.path.parent / "out"

    def write(self) -> Path:
        data = {
            "system": self.system,
            "experiment": self.experiment,
            "discretization": {"K": 8, "n_samples": 64},
            "minimax": {"budget": 20_000, "capture": 1.0},
            "output": {"directory": str(self.outdir)},
            "workers": 2,
            **self.extra,
        }
        self.path.write_text(yaml_dump(data))
        return self.path


@pytest.fixture
def oscillator_config(tmp_path: Path) -> ConfigFile:
    return ConfigFile(
        path=tmp_path / "config.yaml",
        system={"kind": "point-quadratic", "frequencies": [1.0]},
        experiment={"kind": "find-orbit", "epsilon": 0.1},
    )
