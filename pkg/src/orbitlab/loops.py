"""
Truncated Fourier loops in a fixed frame

A loop ``z: ℝ/ℤ → T_mW`` is stored as coefficients ``z_k`` (``k = −K..K``) in
frame coordinates, with ``z(t) = Σ_k e^{2πkJt} z_k``.  Because ``J² = −I``,
``e^{θJ} = cos θ·I + sin θ·J`` and synthesis needs only sines and cosines.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from typing_extensions import Self

from .errors import UndersampledError
from .geometry import TangentFrame, build_frame
from .systems import ModelSystem
from .util import FloatArray


class LoopPart(str, Enum):
    E_MINUS = "E-"
    E_ZERO = "E0"
    E_PLUS = "E+"
    E_T = "E_T"
    E_N = "E_N"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class LoopNorms:
    h_half: float
    l2: float


@dataclass(frozen=True, eq=False)
class FourierLoop:
    frame: TangentFrame
    #: Shape ``(2K + 1, 2n)``; row ``k + K`` holds ``z_k``
    coeffs: FloatArray

    def __post_init__(self) -> None:
        c = np.array(self.coeffs, dtype=float)
        dim = self.frame.basis.shape[0]
        if c.ndim != 2 or c.shape[0] % 2 == 0 or c.shape[1] != dim:
            raise ValueError(f"bad loop coefficient shape {c.shape}")
        c[c.shape[0] // 2, : self.frame.tangent_dim] = 0.0
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, frame: TangentFrame, K: int) -> Self:
        return cls(frame=frame, coeffs=np.zeros((2 * K + 1, frame.basis.shape[0])))

    @classmethod
    def from_vector(cls, frame: TangentFrame, K: int, vec: ArrayLike) -> Self:
        """Inverse of `to_vector`"""
        c = np.zeros((2 * K + 1, frame.basis.shape[0]))
        c[free_mask(frame, K)] = np.asarray(vec, dtype=float)
        return cls(frame=frame, coeffs=c)

    @property
    def m(self) -> FloatArray:
        return self.frame.m

    @property
    def K(self) -> int:
        return self.coeffs.shape[0] // 2

    @property
    def dim(self) -> int:
        return int(self.coeffs.shape[1])

    @cached_property
    def modes(self) -> FloatArray:
        out: FloatArray = np.arange(-self.K, self.K + 1, dtype=float)
        return out

    def coefficient(self, k: int) -> FloatArray:
        out: FloatArray = self.coeffs[k + self.K]
        return out

    def with_coeffs(self, coeffs: ArrayLike) -> FourierLoop:
        return FourierLoop(frame=self.frame, coeffs=np.asarray(coeffs, dtype=float))

    def rebase(self, frame: TangentFrame) -> FourierLoop:
        """The same coefficient array in another frame"""
        return FourierLoop(frame=frame, coeffs=self.coeffs)

    def to_vector(self) -> FloatArray:
        """The free coefficients (everything but the tangential mean)"""
        out: FloatArray = self.coeffs[free_mask(self.frame, self.K)]
        return out

    def _check(self, other: FourierLoop) -> None:
        if other.frame is not self.frame:
            if other.coeffs.shape != self.coeffs.shape or not np.array_equal(
                other.m, self.m
            ):
                raise ValueError("loops live over different base points")

    def __add__(self, other: FourierLoop) -> FourierLoop:
        self._check(other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other: FourierLoop) -> FourierLoop:
        self._check(other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __neg__(self) -> FourierLoop:
        return self.with_coeffs(-self.coeffs)

    def __mul__(self, scalar: float) -> FourierLoop:
        return self.with_coeffs(scalar * self.coeffs)

    __rmul__ = __mul__

    def norms(self) -> LoopNorms:
        return LoopNorms(
            h_half=float(np.sqrt(h_half_inner(self, self))),
            l2=float(np.sqrt(l2_inner(self, self))),
        )

    def h_half_norm(self) -> float:
        return float(np.sqrt(h_half_inner(self, self)))

    def derivative(self) -> FourierLoop:
        """``ż``: coefficient ``k`` becomes ``2πk·J z_k``"""
        j = self.frame.j_frame
        c = 2 * np.pi * self.modes[:, None] * (self.coeffs @ j.T)
        return FourierLoop(frame=self.frame, coeffs=c)

    def to_dict(self) -> dict[str, Any]:
        return {
            "m": [float(v) for v in self.m],
            "K": self.K,
            "coeffs": [[float(v) for v in row] for row in self.coeffs],
        }

    @classmethod
    def from_dict(cls, system: ModelSystem, data: dict[str, Any]) -> Self:
        frame = build_frame(system, np.array(data["m"], dtype=float))
        coeffs = np.array(data["coeffs"], dtype=float)
        if coeffs.shape[0] != 2 * int(data["K"]) + 1:
            raise ValueError("coefficient table does not match K")
        return cls(frame=frame, coeffs=coeffs)


def free_mask(frame: TangentFrame, K: int) -> NDArray[np.bool_]:
    mask = np.ones((2 * K + 1, frame.basis.shape[0]), dtype=bool)
    mask[K, : frame.tangent_dim] = False
    return mask


def _weights(z: FourierLoop, sobolev: bool) -> FloatArray:
    if not sobolev:
        return np.ones(len(z.modes))
    w = 2 * np.pi * np.abs(z.modes)
    w[z.K] = 1.0
    return w


def h_half_inner(z: FourierLoop, w: FourierLoop) -> float:
    """``g(z_0, w_0) + 2π Σ |k| g(z_k, w_k)``"""
    z._check(w)
    g = z.frame.g_frame
    per_mode = np.einsum("ki,ij,kj->k", z.coeffs, g, w.coeffs)
    return float(np.dot(_weights(z, True), per_mode))


def l2_inner(z: FourierLoop, w: FourierLoop) -> float:
    z._check(w)
    g = z.frame.g_frame
    return float(np.einsum("ki,ij,kj->", z.coeffs, g, w.coeffs))


def project(z: FourierLoop, part: LoopPart) -> FourierLoop:
    c = np.array(z.coeffs)
    K = z.K
    t = z.frame.tangent_dim
    if part is LoopPart.E_MINUS:
        c[K:] = 0
    elif part is LoopPart.E_ZERO:
        c[:K] = 0
        c[K + 1 :] = 0
    elif part is LoopPart.E_PLUS:
        c[: K + 1] = 0
    elif part is LoopPart.E_T:
        c[:, t:] = 0
    elif part is LoopPart.E_N:
        c[:, :t] = 0
    else:
        raise AssertionError(f"Unhandled loop part: {part!r}")
    return z.with_coeffs(c)


def check_sampling(count: int, K: int) -> None:
    if count < 2 * (2 * K + 1):
        raise UndersampledError(
            f"{count} time samples cannot resolve loops of order {K};"
            f" need at least {2 * (2 * K + 1)}"
        )


def _is_uniform_grid(ts: FloatArray) -> bool:
    return ts.ndim == 1 and len(ts) > 1 and np.allclose(
        ts, np.arange(len(ts)) / len(ts), rtol=0, atol=1e-14
    )


def time_grid(K: int, oversample: int) -> FloatArray:
    count = oversample * (2 * K + 1)
    check_sampling(count, K)
    out: FloatArray = np.arange(count) / count
    return out


def synthesize_coefficients(
    frame: TangentFrame, coeffs: ArrayLike, t_grid: ArrayLike
) -> FloatArray:
    """
    `synthesize` for a stack of coefficient tables of shape
    ``(..., 2K + 1, 2n)``; returns shape ``(..., len(t_grid), 2n)``.
    Uniform grids ``j/N`` must be fine enough to fit back; scattered times are
    evaluated as given.
    """
    c = np.asarray(coeffs, dtype=float)
    ts = np.asarray(t_grid, dtype=float)
    K = c.shape[-2] // 2
    if _is_uniform_grid(ts):
        check_sampling(len(ts), K)
    angles = 2 * np.pi * np.multiply.outer(ts, np.arange(1, K + 1))
    plus = c[..., K + 1 :, :]
    minus = c[..., K - 1 :: -1, :]
    out: FloatArray = (
        c[..., K, None, :]
        + np.cos(angles) @ (plus + minus)
        + np.sin(angles) @ ((plus - minus) @ frame.j_frame.T)
    )
    return out


def synthesize(z: FourierLoop, t_grid: ArrayLike) -> FloatArray:
    """Evaluates ``z(t)`` (frame coordinates) at the given times"""
    ts = np.asarray(t_grid, dtype=float)
    out = synthesize_coefficients(z.frame, z.coeffs, np.atleast_1d(ts))
    return out if ts.ndim else out[0]


def fit_coefficients(frame: TangentFrame, samples: ArrayLike, K: int) -> FloatArray:
    """
    Coefficients of order ``≤ K`` from samples on the uniform grid
    ``t_j = j/N`` (time along the second-to-last axis); the tangential mean
    is kept
    """
    zs = np.asarray(samples, dtype=float)
    count = zs.shape[-2]
    check_sampling(count, K)
    ts = np.arange(count) / count
    angles = 2 * np.pi * np.multiply.outer(np.arange(1, K + 1), ts)
    cos_part = (2 / count) * (np.cos(angles) @ zs)
    sin_part = (2 / count) * (np.sin(angles) @ zs) @ frame.j_frame.T
    coeffs = np.empty((*zs.shape[:-2], 2 * K + 1, zs.shape[-1]))
    coeffs[..., K, :] = zs.mean(axis=-2)
    coeffs[..., K + 1 :, :] = 0.5 * (cos_part - sin_part)
    coeffs[..., K - 1 :: -1, :] = 0.5 * (cos_part + sin_part)
    return coeffs


def fit(frame: TangentFrame, samples: ArrayLike, K: int) -> FourierLoop:
    return FourierLoop(frame=frame, coeffs=fit_coefficients(frame, samples, K))


def e_N_plus(frame: TangentFrame, K: int) -> FourierLoop:
    """
    ``t ↦ e^{2πJt}v`` with ``v`` the first normal basis vector scaled to unit
    ``g_J`` length, so that the loop has ``‖·‖²_{1/2} = 2π``
    """
    v = np.zeros(frame.basis.shape[0])
    v[frame.tangent_dim] = 1.0
    v /= np.sqrt(v @ frame.g_frame @ v)
    c = np.zeros((2 * K + 1, len(v)))
    c[K + 1] = v
    return FourierLoop(frame=frame, coeffs=c)
