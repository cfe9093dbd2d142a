"""
Frames, compatible structures and Darboux charts along ``M``

Conventions used throughout the package:

- ``Ω(u, v) = uᵀ Ω v`` and Hamiltonian fields satisfy ``Ω(X_H, ·) = dH``,
  so ``X_H = −Ω⁻¹∇H``.
- ``J`` is compatible with ``Ω`` when ``g_J(u, v) = Ω(Ju, v)`` is a metric;
  then ``X_H = J ∇_g H``.
- The normal Hessian ``S`` is half the second derivative, so that
  ``Q(y) = yᵀSy`` is the quadratic Taylor part of ``H`` in normal directions.

Frame coordinates ``ζ = (ξ, y)`` are coefficients with respect to the
combined basis ``F = [tangent_basis, normal_basis]`` of ``T_mW``; standard
coordinates are ``w = Fζ``.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from enum import Enum
from functools import cached_property, lru_cache

import numpy as np
from numpy.typing import ArrayLike
from scipy import linalg

from .consts import FRAME_TOL, GAUSS_NODES, HESSIAN_STEP
from .errors import (
    DegenerateSplittingError,
    NotPositiveDefiniteError,
    SymplecticityError,
)
from .logging import log
from .systems import BaseKind, ModelSystem
from .util import FloatArray, format_point, sym


class Gauge(str, Enum):
    #: Poincaré homotopy primitive of the field, by Gauss–Legendre quadrature
    RADIAL = "radial"
    #: Closed-form primitive of the first-order Taylor expansion of the field
    TAYLOR = "taylor"

    def __str__(self) -> str:
        return self.value


def spd_powers(a: FloatArray, what: str) -> tuple[FloatArray, FloatArray]:
    evals, evecs = linalg.eigh(a)
    if evals[0] <= 0:
        raise NotPositiveDefiniteError(f"{what} is not positive definite")
    root = (evecs * np.sqrt(evals)) @ evecs.T
    inv_root = (evecs / np.sqrt(evals)) @ evecs.T
    return root, inv_root


def compatible_structure(omega: ArrayLike, metric_seed: ArrayLike) -> FloatArray:
    """
    Returns the complex structure ``J = A(AᵀA)^{−1/2}`` built from the polar
    decomposition of ``Ω`` in ``metric_seed``-orthonormal coordinates.  The
    result satisfies ``J² = −I`` and ``Ω(J·, ·)`` is symmetric positive
    definite; when ``Ω`` is already ``metric_seed``-orthogonal, ``J`` is the
    matrix of ``Ω`` itself (``[[0, 1], [−1, 0]]`` for the standard form).
    """
    om = np.asarray(omega, dtype=float)
    seed = np.asarray(metric_seed, dtype=float)
    if om.shape != seed.shape or om.shape[0] != om.shape[-1]:
        raise ValueError("omega and metric_seed must be square of the same size")
    if om.size == 0:
        return np.zeros((0, 0))
    if np.max(np.abs(om + om.T)) > FRAME_TOL * max(1.0, np.max(np.abs(om))):
        raise ValueError("omega is not antisymmetric")
    if np.linalg.cond(om) > 1e12:
        raise DegenerateSplittingError("symplectic form is not invertible")
    root, inv_root = spd_powers(sym(seed), "metric seed")
    a = inv_root @ om @ inv_root
    _, p_inv_sqrt = spd_powers(a.T @ a, "polar factor")
    j: FloatArray = inv_root @ (a @ p_inv_sqrt) @ root
    return j


def compatible_metric(omega: FloatArray, j: FloatArray) -> FloatArray:
    """The metric ``g_J(u, v) = Ω(Ju, v)``, as a matrix"""
    return sym(j.T @ omega)


@dataclass(frozen=True, eq=False)
class DarbouxChart:
    """
    A chart ``Φ_m`` from a ball in ``T_mW`` (standard coordinates) to phase
    space with ``Φ_m(0) = m``, ``DΦ_m(0) = I`` and ``Φ_m*Ω = Ω(m)``.  On a
    magnetic torus it translates fibres by the potential ``A`` of
    ``ω − ω(x₀)``: ``Φ(u, v) = (x₀ + u, v + A(u))``.
    """

    system: ModelSystem
    m: FloatArray
    chart_radius: float
    gauge: Gauge = Gauge.RADIAL

    @cached_property
    def center(self) -> FloatArray:
        return self.system.embed(self.m)

    @cached_property
    def omega_m(self) -> FloatArray:
        return self.system.symplectic_form(self.center)

    @cached_property
    def _nodes(self) -> tuple[FloatArray, FloatArray]:
        x, w = np.polynomial.legendre.leggauss(GAUSS_NODES)
        return 0.5 * (x + 1), 0.5 * w

    @cached_property
    def _field_jet(self) -> tuple[FloatArray, FloatArray]:
        return (
            self.system.magnetic_form(self.m),
            self.system.magnetic_form_gradient(self.m),
        )

    def potential(self, u: ArrayLike) -> tuple[FloatArray, FloatArray]:
        """
        Returns ``A(u)`` and its Jacobian ``DA[..., j, k] = ∂A_j/∂u_k`` for
        displacements ``u`` of the base point
        """
        us = np.asarray(u, dtype=float)
        om0, dom0 = self._field_jet
        if self.gauge is Gauge.TAYLOR:
            a = np.einsum("...i,...a,aij->...j", us, us, dom0) / 3
            da = (
                np.einsum("...a,akj->...jk", us, dom0)
                + np.einsum("...a,kaj->...jk", us, dom0)
            ) / 3
            return a, da
        s, w = self._nodes
        pts = self.m + s[:, None] * us[..., None, :]
        hat = self.system.magnetic_form(pts) - om0
        dom = self.system.magnetic_form_gradient(pts)
        inner = np.einsum("q,...qij->...ij", w * s, hat)
        a = np.einsum("...i,...ij->...j", us, inner)
        da = np.swapaxes(inner, -1, -2) + np.einsum(
            "...i,q,...qkij->...jk", us, w * s**2, dom
        )
        return a, da

    def map(self, w: ArrayLike) -> FloatArray:
        ws = np.asarray(w, dtype=float)
        if self.system.base_kind is BaseKind.POINT:
            out: FloatArray = self.center + ws
            return out
        n = self.system.n
        u, v = ws[..., :n], ws[..., n:]
        a, _ = self.potential(u)
        return np.concatenate([self.m + u, v + a], axis=-1)

    def differential(self, w: ArrayLike) -> FloatArray:
        ws = np.asarray(w, dtype=float)
        dim = 2 * self.system.n
        eye = np.broadcast_to(np.eye(dim), (*ws.shape[:-1], dim, dim)).copy()
        if self.system.base_kind is BaseKind.POINT:
            out: FloatArray = eye
            return out
        n = self.system.n
        _, da = self.potential(ws[..., :n])
        eye[..., n:, :n] = da
        return eye

    def pullback(self, w: ArrayLike) -> FloatArray:
        ws = np.asarray(w, dtype=float)
        d = self.differential(ws)
        om = self.system.symplectic_form(self.map(ws))
        out: FloatArray = np.swapaxes(d, -1, -2) @ om @ d
        return out

    def pullback_residual(
        self, radius: float | None = None, samples: int = 256, seed: int = 0
    ) -> float:
        """
        Largest deviation of ``Φ*Ω`` from ``Ω(m)`` at random points of the
        ball of the given radius
        """
        if radius is None:
            radius = self.chart_radius
        dim = 2 * self.system.n
        rng = np.random.default_rng(seed)
        dirs = rng.normal(size=(samples, dim))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        radii = radius * rng.uniform(size=samples) ** (1 / dim)
        pts = dirs * radii[:, None]
        return float(np.max(np.abs(self.pullback(pts) - self.omega_m)))


def darboux_chart(
    system: ModelSystem,
    m: ArrayLike,
    gauge: Gauge = Gauge.RADIAL,
    tol: float = 1e-8,
) -> DarbouxChart:
    chart = DarbouxChart(
        system=system,
        m=np.asarray(m, dtype=float),
        chart_radius=system.chart_radius,
        gauge=gauge,
    )
    if gauge is Gauge.RADIAL and system.base_kind is BaseKind.TORUS:
        residual = chart.pullback_residual()
        if residual > tol:
            raise SymplecticityError(
                f"Darboux chart at m={format_point(chart.m)} has pullback residual"
                f" {residual:g} at radius {chart.chart_radius:g}"
            )
    return chart


def central_hessian(
    func: Callable[[FloatArray], ArrayLike], dim: int, step: float = HESSIAN_STEP
) -> FloatArray:
    """
    Hessian at the origin of a vectorized scalar function on ``ℝ^dim`` by the
    four-point central-difference stencil
    """
    e = step * np.eye(dim)
    signs = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
    pts = (
        signs[None, None, :, 0, None] * e[:, None, None, :]
        + signs[None, None, :, 1, None] * e[None, :, None, :]
    )
    vals = np.asarray(func(pts.reshape(-1, dim)), dtype=float).reshape(dim, dim, 4)
    hess = (vals[..., 0] - vals[..., 1] - vals[..., 2] + vals[..., 3]) / (4 * step**2)
    return sym(hess)


def normal_basis_field(system: ModelSystem, x: ArrayLike) -> FloatArray:
    """
    The Ω-orthogonal complement ``N(x) = (I − TΩ_T⁻¹TᵀΩ)P`` of ``T_xM``,
    vectorized over leading axes of ``x``
    """
    xs = np.asarray(x, dtype=float)
    omega = system.symplectic_form(system.embed(xs))
    lead = omega.shape[:-2]
    dim = omega.shape[-1]
    fb = np.broadcast_to(system.fibre_basis(xs), (*lead, dim, system.normal_dim))
    if system.l == 0:
        return fb.copy()
    tb = np.broadcast_to(system.tangent_basis(xs), (*lead, dim, 2 * system.l))
    tbt = np.swapaxes(tb, -1, -2)
    omega_t = tbt @ omega @ tb
    out: FloatArray = fb - tb @ np.linalg.solve(omega_t, tbt @ omega @ fb)
    return out


def _splitting(
    system: ModelSystem, m: FloatArray
) -> tuple[FloatArray, FloatArray, FloatArray]:
    omega = system.symplectic_form(system.embed(m))
    tb = system.tangent_basis(m)
    fb = system.fibre_basis(m)
    if tb.shape[1] == 0:
        return tb, fb, omega
    omega_t = tb.T @ omega @ tb
    if np.linalg.cond(omega_t) > 1e12:
        raise DegenerateSplittingError(
            f"Ω is degenerate on T_mM at m={format_point(m)}; M is not"
            " symplectic there"
        )
    nb = normal_basis_field(system, m)
    full = np.hstack([tb, nb])
    if np.linalg.matrix_rank(full) != omega.shape[0]:
        raise DegenerateSplittingError(
            f"normal space at m={format_point(m)} has the wrong dimension"
        )
    return tb, nb, omega


def _normal_hessian(chart: DarbouxChart, normal_basis: FloatArray) -> FloatArray:
    def along_normal(y: FloatArray) -> FloatArray:
        return chart.system.hamiltonian(chart.map(y @ normal_basis.T))

    s = 0.5 * central_hessian(along_normal, normal_basis.shape[1])
    evals = np.linalg.eigvalsh(s)
    if evals[0] <= 0:
        raise NotPositiveDefiniteError(
            f"normal Hessian at m={format_point(chart.m)} is not positive"
            f" definite (smallest eigenvalue {evals[0]:g})"
        )
    return s


@dataclass(frozen=True, eq=False)
class TangentFrame:
    """
    The splitting ``T_mW = T_mM ⊕ (T_mM)^Ω`` at a base point, together with
    ``Ω``, ``J`` and ``g_J`` in standard coordinates and their tangential and
    normal blocks in frame coordinates
    """

    m: FloatArray
    tangent_basis: FloatArray
    normal_basis: FloatArray
    omega_m: FloatArray
    j_m: FloatArray
    g_m: FloatArray
    omega_N: FloatArray
    omega_T: FloatArray
    j_T: FloatArray
    j_N: FloatArray
    g_T: FloatArray
    g_N: FloatArray
    #: Normal Hessian ``S`` in normal-basis coordinates
    hessian_N: FloatArray

    @property
    def n(self) -> int:
        return self.omega_m.shape[0] // 2

    @property
    def l(self) -> int:  # noqa: E743
        return self.tangent_basis.shape[1] // 2

    @property
    def tangent_dim(self) -> int:
        return int(self.tangent_basis.shape[1])

    @cached_property
    def basis(self) -> FloatArray:
        return np.hstack([self.tangent_basis, self.normal_basis])

    @cached_property
    def omega_frame(self) -> FloatArray:
        return linalg.block_diag(self.omega_T, self.omega_N)

    @cached_property
    def j_frame(self) -> FloatArray:
        return linalg.block_diag(self.j_T, self.j_N)

    @cached_property
    def g_frame(self) -> FloatArray:
        return linalg.block_diag(self.g_T, self.g_N)

    @cached_property
    def g_frame_inv(self) -> FloatArray:
        return sym(np.linalg.inv(self.g_frame))

    def to_standard(self, zeta: ArrayLike) -> FloatArray:
        out: FloatArray = np.asarray(zeta, dtype=float) @ self.basis.T
        return out

    def residuals(self) -> dict[str, float]:
        """Residuals of the frame invariants (all should be below 1e-10)"""
        om, j, g = self.omega_m, self.j_m, self.g_m
        dim = om.shape[0]
        bt = self.basis.T
        gb = bt @ g @ self.basis
        t = self.tangent_dim
        return {
            "orthogonality": float(
                np.max(np.abs(self.tangent_basis.T @ om @ self.normal_basis), initial=0)
            ),
            "j_squared": float(np.max(np.abs(j @ j + np.eye(dim)))),
            "g_symmetry": float(np.max(np.abs(g - g.T))),
            "g_min_eigenvalue": float(np.linalg.eigvalsh(sym(g))[0]),
            "omega_antisymmetry": float(np.max(np.abs(om + om.T))),
            "block_diagonal": float(np.max(np.abs(gb[:t, t:]), initial=0)),
        }


def build_frame(system: ModelSystem, m: ArrayLike) -> TangentFrame:
    key = tuple(float(v) for v in np.atleast_1d(np.asarray(m, dtype=float)))
    if system.l == 0:
        key = ()
    return _cached_frame(system, key)


@lru_cache(maxsize=4096)
def _cached_frame(system: ModelSystem, key: tuple[float, ...]) -> TangentFrame:
    m = np.array(key, dtype=float)
    tb, nb, omega = _splitting(system, m)
    chart = darboux_chart(system, m)
    s = _normal_hessian(chart, nb)
    omega_t = tb.T @ omega @ tb
    omega_n = nb.T @ omega @ nb
    j_t = compatible_structure(omega_t, system.base_metric(m))
    j_n = compatible_structure(omega_n, s)
    g_t = compatible_metric(omega_t, j_t)
    g_n = compatible_metric(omega_n, j_n)
    full = np.hstack([tb, nb])
    full_inv = np.linalg.inv(full)
    j_frame = linalg.block_diag(j_t, j_n)
    g_frame = linalg.block_diag(g_t, g_n)
    frame = TangentFrame(
        m=m,
        tangent_basis=tb,
        normal_basis=nb,
        omega_m=omega,
        j_m=full @ j_frame @ full_inv,
        g_m=sym(full_inv.T @ g_frame @ full_inv),
        omega_N=omega_n,
        omega_T=omega_t,
        j_T=j_t,
        j_N=j_n,
        g_T=g_t,
        g_N=g_n,
        hessian_N=s,
    )
    orth = frame.residuals()["orthogonality"]
    if orth > FRAME_TOL * max(1.0, float(np.max(np.abs(omega)))):
        raise DegenerateSplittingError(
            f"splitting at m={format_point(m)} is not Ω-orthogonal (residual {orth:g})"
        )
    log.debug("Built frame at m=%s", format_point(m))
    return frame


def normal_hessian(system: ModelSystem, m: ArrayLike) -> FloatArray:
    """
    The normal Hessian ``S`` at ``m`` (``Q(y) = yᵀSy`` is the quadratic part
    of ``H∘Φ_m`` along the normal basis), by central differences
    """
    return build_frame(system, m).hessian_N
