from __future__ import annotations

from enum import Enum
from functools import cached_property
import math
import os
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, Field, PositiveFloat, PositiveInt, model_validator
from scipy import linalg

from .action import ProfileParameters
from .consts import (
    CLOSURE_TOL,
    DEFAULT_ALPHA,
    DEFAULT_ATOL,
    DEFAULT_B_FACTOR,
    DEFAULT_BUDGET,
    DEFAULT_CAPTURE,
    DEFAULT_COLLAR_WIDTH,
    DEFAULT_DT,
    DEFAULT_GAMMA_SAMPLES,
    DEFAULT_K,
    DEFAULT_NEWTON_MAX_ITER,
    DEFAULT_OVERSAMPLE,
    DEFAULT_PLATEAU_RTOL,
    DEFAULT_PLATEAU_WINDOW,
    DEFAULT_Q,
    DEFAULT_R_FACTOR,
    DEFAULT_RTOL,
    DEFAULT_SIGMA_GRID,
    DEFAULT_TAU_MARGIN,
    DEFAULT_TOL_GRAD,
    DEFAULT_TOL_VALUE,
    DEFAULT_WORKERS,
    DT_MIN,
    OUTER_LEVEL,
    OUTPUT_DIR_ENVVAR,
)
from .geometry import Gauge, build_frame
from .minimax import SearchSettings
from .orbits import DEFAULT_ORBIT_SAMPLES, IntegratorSettings
from .systems import FourierField, MagneticTorus, ModelSystem, PointQuadratic
from .util import yaml_dump, yaml_load

Coefficient = Union[float, list[list[float]]]


class SystemKind(str, Enum):
    POINT_QUADRATIC = "point-quadratic"
    MAGNETIC_TORUS = "magnetic-torus"

    def __str__(self) -> str:
        return self.value


class FieldTerm(BaseModel):
    k: list[int]
    cos: Coefficient = 0.0
    sin: Coefficient = 0.0


class FieldTable(BaseModel):
    """
    A Fourier table of a matrix field on the torus.  A scalar entry stands for
    that multiple of the planar area form (magnetic fields on ``T²``) or of
    the identity (metrics).
    """

    mean: Coefficient
    terms: list[FieldTerm] = Field(default_factory=list)

    def matrix_size(self) -> int | None:
        coefficients = [self.mean]
        for t in self.terms:
            coefficients.extend([t.cos, t.sin])
        for c in coefficients:
            if isinstance(c, list):
                return len(c)
        return None

    def to_field(self, dim: int, unit: np.ndarray) -> FourierField:
        def expand(c: Coefficient) -> np.ndarray:
            if isinstance(c, list):
                return np.array(c, dtype=float)
            return c * unit

        for t in self.terms:
            if len(t.k) != dim:
                raise ValueError(
                    f"wave vector {t.k} has {len(t.k)} components; expected {dim}"
                )
        return FourierField.from_terms(
            expand(self.mean),
            [(t.k, expand(t.cos), expand(t.sin)) for t in self.terms],
            dim=dim,
        )


class SystemConfig(BaseModel):
    kind: SystemKind
    n: PositiveInt | None = None
    l: int | None = None  # noqa: E741
    # point-quadratic:
    frequencies: list[PositiveFloat] | None = None
    cubic: float = 0.0
    # magnetic-torus:
    field: FieldTable | None = None
    metric: FieldTable | None = None
    # both:
    quartic: float = 0.0
    chart_radius: PositiveFloat = 1.0
    base_point: list[float] | None = None
    gauge: Gauge = Gauge.RADIAL

    @model_validator(mode="after")
    def _validate(self) -> SystemConfig:
        if self.kind is SystemKind.POINT_QUADRATIC:
            if not self.frequencies:
                raise ValueError("point-quadratic system needs frequencies")
            n, l = len(self.frequencies), 0  # noqa: E741
        else:
            if self.field is None:
                raise ValueError("magnetic-torus system needs a field table")
            n = self.field.matrix_size() or 2
            if n % 2:
                raise ValueError("magnetic torus dimension must be even")
            l = n // 2  # noqa: E741
        if self.l is not None and self.n is not None and self.l != 0:
            if self.l >= self.n:
                raise ValueError(
                    f"l = {self.l} ≥ n = {self.n} leaves no normal directions"
                )
        if self.n is not None and self.n != n:
            raise ValueError(f"declared n = {self.n} but the system has n = {n}")
        if self.l is not None and self.l != l:
            raise ValueError(f"declared l = {self.l} but the system has l = {l}")
        if self.base_point is not None and len(self.base_point) != 2 * l:
            raise ValueError(
                f"base point has {len(self.base_point)} coordinates; expected {2 * l}"
            )
        return self

    @cached_property
    def system(self) -> ModelSystem:
        if self.kind is SystemKind.POINT_QUADRATIC:
            assert self.frequencies is not None
            return PointQuadratic(
                frequencies=tuple(self.frequencies),
                quartic=self.quartic,
                cubic=self.cubic,
                chart_radius=self.chart_radius,
            )
        assert self.field is not None
        dim = self.field.matrix_size() or 2
        area = np.zeros((dim, dim))
        area[0, 1], area[1, 0] = 1.0, -1.0
        return MagneticTorus(
            field=self.field.to_field(dim, area),
            metric=(
                self.metric.to_field(dim, np.eye(dim))
                if self.metric is not None
                else None
            ),
            quartic=self.quartic,
            chart_radius=self.chart_radius,
        )

    @property
    def m(self) -> np.ndarray:
        if self.base_point is None:
            return self.system.default_base_point()
        return np.array(self.base_point, dtype=float)

    def epsilon_max(self) -> float:
        """
        Largest ``ε`` whose quadratic-model outer level stays within half the
        chart radius at the base point
        """
        frame = build_frame(self.system, self.m)
        lam = float(linalg.eigh(frame.hessian_N, frame.g_N, eigvals_only=True)[0])
        return 0.5 * self.chart_radius * math.sqrt(lam / OUTER_LEVEL)


class DiscretizationConfig(BaseModel):
    K: int = Field(DEFAULT_K, ge=4)
    n_samples: int = Field(DEFAULT_ORBIT_SAMPLES, ge=16)
    oversample: int = Field(DEFAULT_OVERSAMPLE, ge=2)


class ProfileConfig(BaseModel):
    q: float = DEFAULT_Q
    r_factor: PositiveFloat = DEFAULT_R_FACTOR
    b_factor: PositiveFloat = DEFAULT_B_FACTOR
    collar_width: PositiveFloat = DEFAULT_COLLAR_WIDTH


class MinimaxConfig(BaseModel):
    alpha: PositiveFloat = DEFAULT_ALPHA
    tau_margin: float = Field(DEFAULT_TAU_MARGIN, gt=1)
    budget: PositiveInt = DEFAULT_BUDGET
    plateau_window: PositiveInt = DEFAULT_PLATEAU_WINDOW
    plateau_rtol: PositiveFloat = DEFAULT_PLATEAU_RTOL
    dt: PositiveFloat = DEFAULT_DT
    dt_min: PositiveFloat = DT_MIN
    tol_grad: PositiveFloat = DEFAULT_TOL_GRAD
    tol_value: PositiveFloat = DEFAULT_TOL_VALUE
    capture: PositiveFloat = DEFAULT_CAPTURE
    sigma_grid: tuple[PositiveInt, PositiveInt, PositiveInt] = DEFAULT_SIGMA_GRID
    gamma_samples: PositiveInt = DEFAULT_GAMMA_SAMPLES
    base_flow: bool = False
    newton_max_iter: PositiveInt = DEFAULT_NEWTON_MAX_ITER

    @model_validator(mode="after")
    def _validate(self) -> MinimaxConfig:
        if self.dt_min >= self.dt:
            raise ValueError("dt_min must be smaller than dt")
        if self.sigma_grid[2] < 2:
            raise ValueError("Σ needs at least two samples along e⁺")
        return self


def _decreasing(epsilons: list[float]) -> list[float]:
    if any(e <= 0 for e in epsilons):
        raise ValueError("epsilons must be positive")
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError("epsilons must be strictly decreasing")
    return epsilons


class SpectrumExperiment(BaseModel):
    kind: Literal["spectrum"]
    resolution: PositiveInt = 16

    @property
    def epsilons(self) -> list[float]:
        return []


class FindOrbitExperiment(BaseModel):
    kind: Literal["find-orbit"]
    epsilon: PositiveFloat

    @property
    def epsilons(self) -> list[float]:
        return [self.epsilon]


class LevelSequenceExperiment(BaseModel):
    kind: Literal["level-sequence"]
    epsilons: list[float]

    @model_validator(mode="after")
    def _validate(self) -> LevelSequenceExperiment:
        _decreasing(self.epsilons)
        return self


class ConvergenceSweepExperiment(BaseModel):
    kind: Literal["convergence-sweep"]
    epsilons: list[float] = Field(min_length=2)
    samples: int = Field(1024, ge=16)

    @model_validator(mode="after")
    def _validate(self) -> ConvergenceSweepExperiment:
        _decreasing(self.epsilons)
        return self


ExperimentSpec = Annotated[
    Union[
        SpectrumExperiment,
        FindOrbitExperiment,
        LevelSequenceExperiment,
        ConvergenceSweepExperiment,
    ],
    Field(discriminator="kind"),
]


class IntegratorConfig(BaseModel):
    method: Literal["RK45", "DOP853"] = "RK45"
    rtol: PositiveFloat = DEFAULT_RTOL
    atol: PositiveFloat = DEFAULT_ATOL
    closure_tol: PositiveFloat = CLOSURE_TOL


class OutputFormat(str, Enum):
    CSV = "csv"
    JSON = "json"

    def __str__(self) -> str:
        return self.value


class OutputConfig(BaseModel):
    directory: Path = Path("orbitlab-output")
    formats: list[OutputFormat] = Field(
        default_factory=lambda: [OutputFormat.CSV, OutputFormat.JSON]
    )


class ExperimentConfig(BaseModel):
    system: SystemConfig
    discretization: DiscretizationConfig = Field(default_factory=DiscretizationConfig)
    profile: ProfileConfig = Field(default_factory=ProfileConfig)
    minimax: MinimaxConfig = Field(default_factory=MinimaxConfig)
    experiment: ExperimentSpec
    integrator: IntegratorConfig = Field(default_factory=IntegratorConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    seed: int = 0
    workers: PositiveInt = DEFAULT_WORKERS

    @classmethod
    def load_yaml(cls, filepath: Path) -> ExperimentConfig:
        return cls.model_validate(yaml_load(filepath))

    def dump_yaml(self, filepath: Path) -> None:
        filepath.write_text(yaml_dump(self.model_dump(mode="json", exclude_unset=True)))

    @property
    def output_dir(self) -> Path:
        if override := os.environ.get(OUTPUT_DIR_ENVVAR, "").strip():
            return Path(override)
        return self.output.directory

    def wants(self, fmt: OutputFormat) -> bool:
        return fmt in self.output.formats

    @property
    def search_settings(self) -> SearchSettings:
        mm = self.minimax
        return SearchSettings(
            K=self.discretization.K,
            oversample=self.discretization.oversample,
            alpha=mm.alpha,
            tau_margin=mm.tau_margin,
            budget=mm.budget,
            plateau_window=mm.plateau_window,
            plateau_rtol=mm.plateau_rtol,
            dt=mm.dt,
            dt_min=mm.dt_min,
            tol_grad=mm.tol_grad,
            tol_value=mm.tol_value,
            capture=mm.capture,
            sigma_grid=mm.sigma_grid,
            gamma_samples=mm.gamma_samples,
            base_flow=mm.base_flow,
            newton_max_iter=mm.newton_max_iter,
            seed=self.seed,
        )

    @property
    def profile_parameters(self) -> ProfileParameters:
        p = self.profile
        return ProfileParameters(
            q=p.q,
            r_factor=p.r_factor,
            b_factor=p.b_factor,
            collar_width=p.collar_width,
            gauge=self.system.gauge,
        )

    @property
    def integrator_settings(self) -> IntegratorSettings:
        i = self.integrator
        return IntegratorSettings(
            method=i.method, rtol=i.rtol, atol=i.atol, closure_tol=i.closure_tol
        )
