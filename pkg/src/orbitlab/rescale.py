"""
Fibre dilation near ``M`` and the limiting fibrewise linear dynamics

Points near ``M`` are parametrized by the tubular map
``Θ(ξ, y) = embed(x₀ + ξ) + N(x₀ + ξ)y`` in frame coordinates ``ζ = (ξ, y)``,
which keeps ``M = {y = 0}`` fixed.  Dilating the fibre by ``ε`` turns the
Hamiltonian field into ``X_ε``, which converges to the linear field
``X₀(ξ, y) = (0, L(x₀ + ξ)y)`` as ``ε → 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np
from numpy.typing import ArrayLike
from scipy.stats import qmc

from .consts import FRAME_FD_STEP, PAIRING_TOL
from .errors import ChartEscapeError, ConfigError, NotPositiveDefiniteError
from .geometry import TangentFrame, build_frame, normal_basis_field, spd_powers
from .logging import log
from .systems import ModelSystem
from .util import FloatArray, format_point, sym


def symplectic_eigenvalues(omega_N: ArrayLike, S: ArrayLike) -> FloatArray:
    """
    Williamson invariants ``a_1 ≤ … ≤ a_d`` of the positive quadratic form
    ``yᵀSy`` on the symplectic vector space ``(ℝ^{2d}, Ω^N)``; they are half
    the moduli of the eigenvalues of ``(Ω^N)⁻¹·2S``.
    """
    om = np.asarray(omega_N, dtype=float)
    s = sym(np.asarray(S, dtype=float))
    if om.shape != s.shape or om.shape[0] % 2:
        raise ValueError("omega_N and S must be square of the same even size")
    try:
        root, _ = spd_powers(s, "S")
    except NotPositiveDefiniteError:
        raise NotPositiveDefiniteError(
            "symplectic eigenvalues need a positive definite S"
        ) from None
    antisym = root @ np.linalg.inv(om) @ root
    ev = np.linalg.eigvalsh(1j * antisym)
    pos = np.sort(ev[ev > 0])
    neg = np.sort(-ev[ev < 0])
    if len(pos) != len(neg) or len(pos) != om.shape[0] // 2:
        raise ValueError("eigenvalues of (Ω^N)⁻¹S do not come in ± pairs")
    if np.max(np.abs(pos - neg)) > PAIRING_TOL * max(1.0, float(pos[-1])):
        raise ValueError("eigenvalues of (Ω^N)⁻¹S do not pair up")
    out: FloatArray = pos
    return out


@dataclass(frozen=True)
class SymplecticSpectrum:
    m: FloatArray
    values: FloatArray

    @property
    def periods(self) -> FloatArray:
        """Periods ``π/a_i`` of the limiting normal oscillations"""
        out: FloatArray = np.pi / self.values
        return out

    def as_row(self) -> list[float]:
        return [*map(float, self.m), *map(float, self.values)]


def _limit_matrix(frame: TangentFrame) -> FloatArray:
    out: FloatArray = -np.linalg.solve(frame.omega_N, 2 * frame.hessian_N)
    return out


@dataclass(frozen=True, eq=False)
class LimitField:
    """
    The fibrewise linear field ``(ξ, y) ↦ (0, L(m + ξ)y)`` with
    ``L = −(Ω^N)⁻¹·2S``
    """

    system: ModelSystem
    frame: TangentFrame

    @property
    def m(self) -> FloatArray:
        return self.frame.m

    @cached_property
    def matrix(self) -> FloatArray:
        return _limit_matrix(self.frame)

    def matrix_at(self, xi: ArrayLike) -> FloatArray:
        """``L`` at the base point ``m + ξ``, in the normal basis there"""
        offset = np.asarray(xi, dtype=float)
        if not np.any(offset):
            return self.matrix
        return _limit_matrix(build_frame(self.system, self.m + offset))

    @cached_property
    def eigenvalues(self) -> FloatArray:
        out: FloatArray = np.linalg.eigvals(self.matrix)
        return out

    @cached_property
    def spectrum(self) -> SymplecticSpectrum:
        return SymplecticSpectrum(
            m=self.m,
            values=symplectic_eigenvalues(self.frame.omega_N, self.frame.hessian_N),
        )

    def __call__(self, zeta: ArrayLike) -> FloatArray:
        zs = np.asarray(zeta, dtype=float)
        t = self.frame.tangent_dim
        xi, y = zs[..., :t], zs[..., t:]
        if t == 0:
            vel = y @ self.matrix.T
        else:
            flat_xi = xi.reshape(-1, t)
            flat_y = y.reshape(-1, y.shape[-1])
            vel = np.array(
                [self.matrix_at(x) @ v for x, v in zip(flat_xi, flat_y)]
            ).reshape(y.shape)
        return np.concatenate([np.zeros_like(xi), vel], axis=-1)


def limit_field(system: ModelSystem, m: ArrayLike) -> LimitField:
    return LimitField(system=system, frame=build_frame(system, m))


@dataclass(frozen=True, eq=False)
class RescaledField:
    """
    ``X_ε`` in frame coordinates at a base point: the pushforward of
    ``X_H`` under ``(ξ, y) ↦ Θ(ξ, εy)``
    """

    system: ModelSystem
    frame: TangentFrame
    epsilon: float

    @property
    def m(self) -> FloatArray:
        return self.frame.m

    def tubular(self, xi: FloatArray, y: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Returns ``Θ(ξ, y)`` and its Jacobian in frame coordinates"""
        system = self.system
        nb = self.frame.normal_basis
        if self.frame.tangent_dim == 0:
            point = system.embed(self.m) + y @ nb.T
            jac = np.broadcast_to(nb, (*y.shape[:-1], *nb.shape)).copy()
            return point, jac
        x = self.m + xi
        normal = normal_basis_field(system, x)
        point = system.embed(x) + np.einsum("...ij,...j->...i", normal, y)
        columns = []
        for a in range(self.frame.tangent_dim):
            step = np.zeros(self.frame.tangent_dim)
            step[a] = FRAME_FD_STEP
            dn = (
                normal_basis_field(system, x + step)
                - normal_basis_field(system, x - step)
            ) / (2 * FRAME_FD_STEP)
            columns.append(np.einsum("...ij,...j->...i", dn, y))
        tb = system.tangent_basis(x)
        dxi = tb + np.stack(columns, axis=-1)
        return point, np.concatenate([dxi, normal], axis=-1)

    def check_domain(self, zeta: FloatArray) -> None:
        t = self.frame.tangent_dim
        y = zeta[..., t:]
        radius = self.epsilon * np.sqrt(
            np.einsum("...i,ij,...j->...", y, self.frame.g_N, y)
        )
        if np.any(radius > self.system.chart_radius):
            raise ChartEscapeError(
                f"dilated point at distance {float(np.max(radius)):g} leaves the"
                f" chart of radius {self.system.chart_radius:g} around"
                f" m={format_point(self.m)}"
            )

    def __call__(self, zeta: ArrayLike) -> FloatArray:
        zs = np.asarray(zeta, dtype=float)
        self.check_domain(zs)
        t = self.frame.tangent_dim
        eps = self.epsilon
        point, jac = self.tubular(zs[..., :t], eps * zs[..., t:])
        omega = self.system.symplectic_form(point)
        jac_t = np.swapaxes(jac, -1, -2)
        pulled = jac_t @ omega @ jac
        dh = self.system.hamiltonian_gradient(point)
        force = np.einsum("...ij,...j->...i", jac_t, dh)
        vel = -np.linalg.solve(pulled, force[..., None])[..., 0]
        return np.concatenate([vel[..., :t], vel[..., t:] / eps], axis=-1)


def rescaled_field(system: ModelSystem, m: ArrayLike, epsilon: float) -> RescaledField:
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be positive, got {epsilon}")
    return RescaledField(system=system, frame=build_frame(system, m), epsilon=epsilon)


def ball_samples(frame: TangentFrame, count: int = 1024, seed: int = 0) -> FloatArray:
    """
    Deterministic quasi-random points of the unit ball of ``g_J(m)`` in frame
    coordinates
    """
    dim = frame.g_frame.shape[0]
    sobol = qmc.Sobol(d=dim, scramble=True, seed=seed)
    cube = 2 * sobol.random(count) - 1
    ball = cube[np.sum(cube**2, axis=1) <= 1]
    _, inv_root = spd_powers(frame.g_frame, "g_J")
    out: FloatArray = ball @ inv_root
    return out


def convergence_sweep(
    system: ModelSystem,
    m: ArrayLike,
    epsilon_list: list[float],
    samples: int = 1024,
    seed: int = 0,
) -> list[float]:
    """
    For each ``ε``, the supremum of ``‖X_ε − X₀‖_{g_J(m)}`` over a fixed
    sample of the unit ball
    """
    if any(e <= 0 for e in epsilon_list):
        raise ConfigError("convergence sweep needs positive epsilons")
    if any(b >= a for a, b in zip(epsilon_list, epsilon_list[1:])):
        raise ConfigError("convergence sweep epsilons must be decreasing")
    limit = limit_field(system, m)
    frame = limit.frame
    pts = ball_samples(frame, samples, seed)
    base = limit(pts)
    plog = log.sublogger(f"m={format_point(frame.m)}")
    deviations = []
    for eps in epsilon_list:
        diff = rescaled_field(system, frame.m, eps)(pts) - base
        dev = float(
            np.sqrt(np.max(np.einsum("si,ij,sj->s", diff, frame.g_frame, diff)))
        )
        plog.debug("epsilon=%g: sup |X_ε − X₀| = %.3e", eps, dev)
        deviations.append(dev)
    return deviations


def loglog_slope(epsilons: list[float], deviations: list[float]) -> float:
    """Least-squares slope of ``log(deviation)`` against ``log(ε)``"""
    slope, _ = np.polyfit(np.log(epsilons), np.log(deviations), 1)
    return float(slope)


def spectrum_grid(
    system: ModelSystem, resolution: int = 16
) -> list[SymplecticSpectrum]:
    """Symplectic spectra on a uniform grid of the base torus"""
    if system.l == 0:
        return [limit_field(system, np.zeros(0)).spectrum]
    axis = 2 * np.pi * np.arange(resolution) / resolution
    spectra = []
    for point in product(axis, repeat=2 * system.l):
        spectra.append(limit_field(system, np.array(point)).spectrum)
    log.debug("Computed %d normal spectra", len(spectra))
    return spectra
