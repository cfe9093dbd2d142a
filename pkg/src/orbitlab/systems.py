"""
Model symplectic systems with an extremal submanifold ``M``

Two families are built in:

- `PointQuadratic`: ``ℝ^{2n}`` with the standard form, ``M`` the origin
- `MagneticTorus`: the twisted cotangent bundle ``T*T^{2l}`` with form
  ``dλ + π*ω`` and kinetic Hamiltonian ``pᵀG(x)⁻¹p``, ``M`` the zero section

Phase points are arrays whose last axis has length ``2n``; every evaluator is
vectorized over leading axes.  Base points of a torus are ``2l`` angles.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from itertools import combinations
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ConfigError
from .util import FloatArray


class BaseKind(str, Enum):
    POINT = "point"
    TORUS = "flat-torus"

    def __str__(self) -> str:
        return self.value


def standard_form(n: int) -> FloatArray:
    """The matrix of ``Σ dq_i ∧ dp_i`` in coordinates ``(q, p)``"""
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


@dataclass(frozen=True, eq=False)
class FourierField:
    """
    A ``d×d`` matrix field on the torus ``ℝ^{dim}/(2πℤ)^{dim}`` given by a
    finite table of wave vectors and cosine/sine coefficient matrices:

        M(x) = mean + Σ_t cos(k_t·x) C_t + sin(k_t·x) S_t
    """

    mean: FloatArray
    wavevectors: NDArray[np.int64]
    cos: FloatArray
    sin: FloatArray

    @classmethod
    def constant(cls, mean: ArrayLike, dim: int | None = None) -> FourierField:
        m = np.array(mean, dtype=float)
        if dim is None:
            dim = m.shape[0]
        return cls(
            mean=m,
            wavevectors=np.zeros((0, dim), dtype=np.int64),
            cos=np.zeros((0, *m.shape)),
            sin=np.zeros((0, *m.shape)),
        )

    @classmethod
    def from_terms(
        cls,
        mean: ArrayLike,
        terms: Sequence[tuple[Sequence[int], ArrayLike, ArrayLike]],
        dim: int | None = None,
    ) -> FourierField:
        m = np.array(mean, dtype=float)
        if dim is None:
            dim = m.shape[0]
        if not terms:
            return cls.constant(m, dim)
        ks = np.array([t[0] for t in terms], dtype=np.int64).reshape(len(terms), dim)
        cs = np.array([np.broadcast_to(t[1], m.shape) for t in terms], dtype=float)
        ss = np.array([np.broadcast_to(t[2], m.shape) for t in terms], dtype=float)
        return cls(mean=m, wavevectors=ks, cos=cs, sin=ss)

    @property
    def dim(self) -> int:
        return int(self.wavevectors.shape[1])

    @property
    def is_constant(self) -> bool:
        return self.wavevectors.shape[0] == 0 or (
            not np.any(self.cos) and not np.any(self.sin)
        )

    def __call__(self, x: ArrayLike) -> FloatArray:
        xs = np.asarray(x, dtype=float)
        phase = xs @ self.wavevectors.T
        out: FloatArray = (
            self.mean
            + np.einsum("...t,tij->...ij", np.cos(phase), self.cos)
            + np.einsum("...t,tij->...ij", np.sin(phase), self.sin)
        )
        return out

    def gradient(self, x: ArrayLike) -> FloatArray:
        """Returns ``D[..., a, i, j] = ∂M_ij/∂x_a``"""
        xs = np.asarray(x, dtype=float)
        phase = xs @ self.wavevectors.T
        kf = self.wavevectors.astype(float)
        out: FloatArray = np.einsum(
            "...t,ta,tij->...aij", -np.sin(phase), kf, self.cos
        ) + np.einsum("...t,ta,tij->...aij", np.cos(phase), kf, self.sin)
        return out

    def coefficient_matrices(self) -> list[FloatArray]:
        return [self.mean, *self.cos, *self.sin]

    def closedness_defect(self) -> float:
        """
        Largest violation of ``dω = 0`` over all terms, i.e. of
        ``k_a C_bc + k_b C_ca + k_c C_ab = 0``
        """
        worst = 0.0
        for kvec, c, s in zip(self.wavevectors, self.cos, self.sin):
            for a, b, cc in combinations(range(self.dim), 3):
                for coef in (c, s):
                    v = (
                        kvec[a] * coef[b, cc]
                        + kvec[b] * coef[cc, a]
                        + kvec[cc] * coef[a, b]
                    )
                    worst = max(worst, abs(float(v)))
        return worst

    def to_dict(self) -> dict[str, Any]:
        return {
            "mean": self.mean.tolist(),
            "terms": [
                {"k": k.tolist(), "cos": c.tolist(), "sin": s.tolist()}
                for k, c, s in zip(self.wavevectors, self.cos, self.sin)
            ],
        }


class ModelSystem(ABC):
    """
    A symplectic manifold ``(W, Ω)`` with a Hamiltonian whose minimum value
    ``0`` is attained on a symplectic submanifold ``M``
    """

    chart_radius: float

    @property
    @abstractmethod
    def n(self) -> int:
        ...

    @property
    @abstractmethod
    def l(self) -> int:  # noqa: E743
        ...

    @property
    @abstractmethod
    def base_kind(self) -> BaseKind:
        ...

    @abstractmethod
    def hamiltonian(self, z: ArrayLike) -> FloatArray:
        ...

    @abstractmethod
    def hamiltonian_gradient(self, z: ArrayLike) -> FloatArray:
        ...

    @abstractmethod
    def symplectic_form(self, z: ArrayLike) -> FloatArray:
        ...

    @abstractmethod
    def embed(self, x: ArrayLike) -> FloatArray:
        """Map a base point to the corresponding phase point on ``M``"""
        ...

    @abstractmethod
    def tangent_basis(self, x: ArrayLike) -> FloatArray:
        """``2n × 2l`` matrix whose columns span ``T_xM``"""
        ...

    @abstractmethod
    def fibre_basis(self, x: ArrayLike) -> FloatArray:
        """``2n × 2(n−l)`` matrix whose columns complement ``T_xM``"""
        ...

    @abstractmethod
    def describe(self) -> dict[str, Any]:
        ...

    def base_metric(self, x: ArrayLike) -> FloatArray:  # noqa: U100
        return np.zeros((2 * self.l, 2 * self.l))

    def magnetic_form(self, x: ArrayLike) -> FloatArray:
        xs = np.asarray(x, dtype=float)
        return np.zeros((*xs.shape[:-1], 2 * self.l, 2 * self.l))

    def magnetic_form_gradient(self, x: ArrayLike) -> FloatArray:
        xs = np.asarray(x, dtype=float)
        return np.zeros((*xs.shape[:-1], 2 * self.l, 2 * self.l, 2 * self.l))

    @property
    def normal_dim(self) -> int:
        return 2 * (self.n - self.l)

    def vector_field(self, z: ArrayLike) -> FloatArray:
        """``X_H = −Ω⁻¹∇H`` (from ``Ω(X_H, ·) = dH``)"""
        zs = np.asarray(z, dtype=float)
        w = self.symplectic_form(zs)
        grad = self.hamiltonian_gradient(zs)
        out: FloatArray = -np.linalg.solve(w, grad[..., None])[..., 0]
        return out

    def default_base_point(self) -> FloatArray:
        return np.zeros(2 * self.l)

    def check(self, samples: int = 64, seed: int = 0) -> list[str]:
        """
        Sample the system invariants near ``M``; returns a list of problems
        (empty when all hold)
        """
        problems: list[str] = []
        rng = np.random.default_rng(seed)
        xs = rng.uniform(0, 2 * np.pi, size=(samples, 2 * self.l))
        if self.l:
            on_m = np.array([self.embed(x) for x in xs])
        else:
            on_m = np.zeros((1, 2 * self.n))
        hm = self.hamiltonian(on_m)
        if np.max(np.abs(hm)) > 1e-12:
            problems.append(
                f"H does not vanish on M (max |H| = {np.max(np.abs(hm)):g})"
            )
        offsets = rng.normal(size=(samples, 2 * self.n))
        offsets *= 0.1 * self.chart_radius / np.linalg.norm(offsets, axis=1)[:, None]
        zs = on_m[rng.integers(0, len(on_m), size=samples)] + offsets
        if np.min(self.hamiltonian(zs)) < -1e-12:
            problems.append("H is negative near M")
        w = self.symplectic_form(zs)
        if np.max(np.abs(w + np.swapaxes(w, -1, -2))) > 1e-12:
            problems.append("symplectic form is not antisymmetric")
        dets = np.abs(np.linalg.det(w))
        if np.min(dets) < 1e-10:
            problems.append(
                f"symplectic form is degenerate (min |det| = {np.min(dets):g})"
            )
        return problems


@dataclass(frozen=True, eq=False)
class PointQuadratic(ModelSystem):
    """
    ``H = Σ a_i (q_i² + p_i²) + quartic·|z|⁴ + cubic·q_1³`` on ``ℝ^{2n}`` with
    the standard form; ``M`` is the origin
    """

    frequencies: tuple[float, ...]
    quartic: float = 0.0
    cubic: float = 0.0
    chart_radius: float = 1.0

    def __post_init__(self) -> None:
        if not self.frequencies:
            raise ConfigError("point-quadratic system needs at least one frequency")
        if any(a <= 0 for a in self.frequencies):
            raise ConfigError("point-quadratic frequencies must be positive")

    @property
    def n(self) -> int:
        return len(self.frequencies)

    @property
    def l(self) -> int:  # noqa: E743
        return 0

    @property
    def base_kind(self) -> BaseKind:
        return BaseKind.POINT

    @cached_property
    def _weights(self) -> FloatArray:
        a = np.asarray(self.frequencies, dtype=float)
        return np.concatenate([a, a])

    def hamiltonian(self, z: ArrayLike) -> FloatArray:
        zs = np.asarray(z, dtype=float)
        r2 = np.sum(zs**2, axis=-1)
        out: FloatArray = (
            np.sum(self._weights * zs**2, axis=-1)
            + self.quartic * r2**2
            + self.cubic * zs[..., 0] ** 3
        )
        return out

    def hamiltonian_gradient(self, z: ArrayLike) -> FloatArray:
        zs = np.asarray(z, dtype=float)
        r2 = np.sum(zs**2, axis=-1)
        grad = 2 * self._weights * zs + 4 * self.quartic * r2[..., None] * zs
        grad[..., 0] += 3 * self.cubic * zs[..., 0] ** 2
        out: FloatArray = grad
        return out

    def symplectic_form(self, z: ArrayLike) -> FloatArray:
        zs = np.asarray(z, dtype=float)
        return np.broadcast_to(
            standard_form(self.n), (*zs.shape[:-1], 2 * self.n, 2 * self.n)
        ).copy()

    def embed(self, x: ArrayLike) -> FloatArray:  # noqa: U100
        return np.zeros(2 * self.n)

    def tangent_basis(self, x: ArrayLike) -> FloatArray:  # noqa: U100
        return np.zeros((2 * self.n, 0))

    def fibre_basis(self, x: ArrayLike) -> FloatArray:  # noqa: U100
        return np.eye(2 * self.n)

    def describe(self) -> dict[str, Any]:
        return {
            "kind": "point-quadratic",
            "n": self.n,
            "l": 0,
            "frequencies": list(self.frequencies),
            "quartic": self.quartic,
            "cubic": self.cubic,
        }


@dataclass(frozen=True, eq=False)
class MagneticTorus(ModelSystem):
    """
    Charged particle on the flat torus ``T^{2l}`` in a nondegenerate closed
    magnetic field ``ω``: phase coordinates ``(x, p)``, form
    ``Ω = [[ω(x), I], [−I, 0]]`` and Hamiltonian
    ``e + quartic·e²`` with ``e = pᵀG(x)⁻¹p``
    """

    field: FourierField
    metric: FourierField | None = None
    quartic: float = 0.0
    chart_radius: float = 1.0

    def __post_init__(self) -> None:
        d = self.field.mean.shape[0]
        if d % 2 or d == 0 or self.field.mean.shape != (d, d):
            raise ConfigError(
                "magnetic field must be a nonempty even-dimensional square table"
            )
        if self.field.dim != d:
            raise ConfigError(
                f"magnetic wave vectors have {self.field.dim} components; expected {d}"
            )
        for c in self.field.coefficient_matrices():
            if np.max(np.abs(c + c.T)) > 1e-14:
                raise ConfigError("magnetic field coefficients must be antisymmetric")
        for c in self.metric_field.coefficient_matrices():
            if np.max(np.abs(c - c.T)) > 1e-14:
                raise ConfigError("metric coefficients must be symmetric")
        if (defect := self.field.closedness_defect()) > 1e-12:
            raise ConfigError(f"magnetic field is not closed (defect {defect:g})")

    @cached_property
    def metric_field(self) -> FourierField:
        if self.metric is None:
            return FourierField.constant(np.eye(self.n))
        return self.metric

    @property
    def n(self) -> int:
        return int(self.field.mean.shape[0])

    @property
    def l(self) -> int:  # noqa: E743
        return self.n // 2

    @property
    def base_kind(self) -> BaseKind:
        return BaseKind.TORUS

    def _split(self, z: ArrayLike) -> tuple[FloatArray, FloatArray]:
        zs = np.asarray(z, dtype=float)
        return zs[..., : self.n], zs[..., self.n :]

    def _kinetic(self, z: ArrayLike) -> tuple[FloatArray, FloatArray, FloatArray]:
        x, p = self._split(z)
        g = self.metric_field(x)
        v = np.linalg.solve(g, p[..., None])[..., 0]
        e = np.sum(p * v, axis=-1)
        return x, v, e

    def hamiltonian(self, z: ArrayLike) -> FloatArray:
        _, _, e = self._kinetic(z)
        out: FloatArray = e + self.quartic * e**2
        return out

    def hamiltonian_gradient(self, z: ArrayLike) -> FloatArray:
        x, v, e = self._kinetic(z)
        scale = (1 + 2 * self.quartic * e)[..., None]
        dg = self.metric_field.gradient(x)
        grad_x = -np.einsum("...i,...aij,...j->...a", v, dg, v)
        out: FloatArray = scale * np.concatenate([grad_x, 2 * v], axis=-1)
        return out

    def symplectic_form(self, z: ArrayLike) -> FloatArray:
        x, _ = self._split(z)
        om = self.field(x)
        eye = np.broadcast_to(np.eye(self.n), om.shape)
        zero = np.zeros_like(om)
        top = np.concatenate([om, eye], axis=-1)
        bottom = np.concatenate([-eye, zero], axis=-1)
        out: FloatArray = np.concatenate([top, bottom], axis=-2)
        return out

    def embed(self, x: ArrayLike) -> FloatArray:
        xs = np.asarray(x, dtype=float)
        return np.concatenate([xs, np.zeros_like(xs)], axis=-1)

    def tangent_basis(self, x: ArrayLike) -> FloatArray:  # noqa: U100
        return np.vstack([np.eye(self.n), np.zeros((self.n, self.n))])

    def fibre_basis(self, x: ArrayLike) -> FloatArray:  # noqa: U100
        return np.vstack([np.zeros((self.n, self.n)), np.eye(self.n)])

    def base_metric(self, x: ArrayLike) -> FloatArray:
        return self.metric_field(x)

    def magnetic_form(self, x: ArrayLike) -> FloatArray:
        return self.field(x)

    def magnetic_form_gradient(self, x: ArrayLike) -> FloatArray:
        return self.field.gradient(x)

    def describe(self) -> dict[str, Any]:
        return {
            "kind": "magnetic-torus",
            "n": self.n,
            "l": self.l,
            "field": self.field.to_dict(),
            "metric": self.metric_field.to_dict(),
            "quartic": self.quartic,
        }


def planar_field(
    mean: float, terms: Sequence[tuple[Sequence[int], float, float]] = ()
) -> FourierField:
    """
    The 2-form ``B(x) dx₁∧dx₂`` on ``T²`` for a scalar Fourier table
    ``B = mean + Σ c cos(k·x) + s sin(k·x)``
    """
    rot = np.array([[0.0, 1.0], [-1.0, 0.0]])
    return FourierField.from_terms(
        mean * rot, [(k, c * rot, s * rot) for k, c, s in terms], dim=2
    )


def harmonic_oscillator(
    frequencies: Sequence[float] = (1.0,), chart_radius: float = 1.0
) -> PointQuadratic:
    return PointQuadratic(frequencies=tuple(frequencies), chart_radius=chart_radius)


def constant_field_torus(b: float = 1.0, chart_radius: float = 1.0) -> MagneticTorus:
    return MagneticTorus(field=planar_field(b), chart_radius=chart_radius)


def varying_field_torus(
    mean: float = 1.0, amplitude: float = 0.3, chart_radius: float = 1.0
) -> MagneticTorus:
    """``B(x) = mean + amplitude·cos(x₁)``"""
    return MagneticTorus(
        field=planar_field(mean, [((1, 0), amplitude, 0.0)]),
        chart_radius=chart_radius,
    )
