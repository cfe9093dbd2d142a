"""
The modified Hamiltonian ``h_m`` and the action functional ``F_m``

``h_m`` lives on ``T_mW`` in frame coordinates ``ζ = (ξ, y)``.  It vanishes on
the region around ``T_mM × {0}`` bounded by the level ``ρ = −ε``, rises to
``b`` across the shell ``|ρ| < ε`` and beyond ``‖y‖ = r`` turns into the
quadratic tail ``(q/2)π‖y‖²``.  The level coordinate ``ρ`` comes from
``H∘Φ_m = ε²(1 + ρ/4)`` near ``m`` and from the quadratic model ``yᵀSy``
further out, blended across a thin collar.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any

import numpy as np
from numpy.typing import ArrayLike
from scipy import linalg
from scipy.optimize import brentq

from .consts import (
    BASE_FD_STEP,
    CHART_EXTENT_FACTOR,
    DEFAULT_B_FACTOR,
    DEFAULT_COLLAR_WIDTH,
    DEFAULT_OVERSAMPLE,
    DEFAULT_Q,
    DEFAULT_R_FACTOR,
    GAMMA_DIRECTIONS,
    LEVEL_FD_STEP,
    MIN_BOUND_SAMPLES,
    OUTER_LEVEL,
    SECTION_L2_CONSTANT,
)
from .errors import (
    BoundsViolationError,
    ChartEscapeError,
    ConfigError,
    InadmissibleQError,
    ProfileWindowError,
)
from .geometry import DarbouxChart, Gauge, TangentFrame, build_frame, darboux_chart
from .logging import log
from .loops import (
    FourierLoop,
    fit_coefficients,
    free_mask,
    synthesize_coefficients,
    time_grid,
)
from .systems import ModelSystem
from .util import (
    FloatArray,
    format_point,
    quantify,
    smoothstep,
    smoothstep_prime,
    smoothstep_second,
    sym,
)


def q_lower_bound(n: int, l: int) -> float:  # noqa: E741
    """``max(2l/(n−l), 2/c)`` with ``c`` the L² constant of ``e⁺_N``"""
    return max(2 * l / (n - l), 2 / SECTION_L2_CONSTANT)


def is_even_integer(q: float) -> bool:
    return float(q).is_integer() and int(q) % 2 == 0


def check_q(q: float, n: int, l: int) -> None:  # noqa: E741
    if is_even_integer(q):
        raise InadmissibleQError(
            f"q = {q:g} is an even integer; the quadratic tail resonates with"
            " the loop modes"
        )
    if q <= (bound := q_lower_bound(n, l)):
        raise InadmissibleQError(f"q = {q:g} must exceed {bound:g}")


def _model_radius(frame: TangentFrame, epsilon: float) -> float:
    """Largest ``‖y‖`` on the quadratic-model outer level ``yᵀSy = 5ε²/4``"""
    lam = linalg.eigh(frame.hessian_N, frame.g_N, eigvals_only=True)[0]
    return float(epsilon * np.sqrt(OUTER_LEVEL / lam))


@dataclass(frozen=True, eq=False)
class LevelParameter:
    """The level coordinate ``ρ`` on ``T_mW`` and its differential"""

    frame: TangentFrame
    chart: DarbouxChart
    epsilon: float
    #: Radius of the pure-chart region (including the collar)
    extent: float
    collar: float

    @classmethod
    def build(
        cls,
        system: ModelSystem,
        m: ArrayLike,
        epsilon: float,
        collar_width: float = DEFAULT_COLLAR_WIDTH,
        gauge: Gauge = Gauge.RADIAL,
    ) -> LevelParameter:
        if not epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {epsilon}")
        frame = build_frame(system, m)
        chart = darboux_chart(system, frame.m, gauge)
        gamma0 = _model_radius(frame, epsilon)
        extent = min(system.chart_radius, CHART_EXTENT_FACTOR * gamma0)
        return cls(
            frame=frame,
            chart=chart,
            epsilon=epsilon,
            extent=float(extent),
            collar=float(collar_width * gamma0),
        )

    @property
    def system(self) -> ModelSystem:
        return self.chart.system

    @cached_property
    def gamma0(self) -> float:
        return _model_radius(self.frame, self.epsilon)

    def energy(self, zeta: ArrayLike) -> FloatArray:
        """``H∘Φ_m`` in frame coordinates"""
        w = np.asarray(zeta, dtype=float) @ self.frame.basis.T
        return self.system.hamiltonian(self.chart.map(w))

    def energy_differential(self, zeta: ArrayLike) -> FloatArray:
        w = np.asarray(zeta, dtype=float) @ self.frame.basis.T
        grad = self.system.hamiltonian_gradient(self.chart.map(w))
        dphi = self.chart.differential(w)
        out: FloatArray = np.einsum("...ij,...i->...j", dphi, grad) @ self.frame.basis
        return out

    def evaluate(
        self, zeta: ArrayLike, differential: bool = False
    ) -> tuple[FloatArray, FloatArray | None]:
        zs = np.asarray(zeta, dtype=float)
        frame = self.frame
        t = frame.tangent_dim
        eps2 = self.epsilon**2
        y = zs[..., t:]
        sy = y @ frame.hessian_N
        rho_e = 4 * (np.sum(sy * y, axis=-1) - eps2) / eps2
        gz = zs @ frame.g_frame
        radius = np.sqrt(np.sum(gz * zs, axis=-1))
        u = (radius - (self.extent - self.collar)) / self.collar
        chi = 1 - smoothstep(u)
        rho_c = 4 * (self.energy(zs) - eps2) / eps2
        rho = chi * rho_c + (1 - chi) * rho_e
        if not differential:
            return rho, None
        drho_e = np.concatenate([np.zeros_like(zs[..., :t]), 8 * sy / eps2], axis=-1)
        drho_c = 4 * self.energy_differential(zs) / eps2
        safe = np.where(radius > 0, radius, 1.0)
        dchi = (-smoothstep_prime(u) / self.collar / safe)[..., None] * gz
        d = (
            chi[..., None] * drho_c
            + (1 - chi)[..., None] * drho_e
            + (rho_c - rho_e)[..., None] * dchi
        )
        return rho, d

    def __call__(self, zeta: ArrayLike) -> FloatArray:
        rho, _ = self.evaluate(zeta)
        return rho

    def second_differential(self, zeta: ArrayLike) -> FloatArray:
        """``D²ρ`` by central differences of ``dρ``, shape ``(..., d, d)``"""
        zs = np.asarray(zeta, dtype=float)
        step = LEVEL_FD_STEP * self.gamma0
        shifts = step * np.eye(zs.shape[-1])
        _, plus = self.evaluate(zs[..., None, :] + shifts, differential=True)
        _, minus = self.evaluate(zs[..., None, :] - shifts, differential=True)
        assert plus is not None and minus is not None
        return sym((plus - minus) / (2 * step))

    def project(
        self, points: ArrayLike, target: float, max_iter: int = 50
    ) -> FloatArray:
        """
        Rescales each point along its ray from the origin onto ``ρ = target``
        by safeguarded Newton steps
        """
        pts = np.asarray(points, dtype=float)
        scale = np.ones(pts.shape[:-1])
        for _ in range(max_iter):
            rho, d = self.evaluate(scale[..., None] * pts, differential=True)
            assert d is not None
            slope = np.sum(d * pts, axis=-1)
            if np.any(slope <= 0):
                raise ChartEscapeError(
                    f"ρ does not grow along a ray at m={format_point(self.frame.m)}"
                )
            excess = rho - target
            scale = np.clip(scale - excess / slope, 0.5 * scale, 2 * scale)
            if np.max(np.abs(excess)) <= 1e-13 * max(1.0, abs(target)):
                break
        else:
            raise ChartEscapeError(
                f"rays do not settle on ρ = {target:g} at"
                f" m={format_point(self.frame.m)}"
            )
        out: FloatArray = scale[..., None] * pts
        return out

    def crossing(self, xi: FloatArray, direction: FloatArray, target: float) -> float:
        """
        The smallest ``s > 0`` found by bracketing with ``ρ(ξ, s·direction) =
        target``, searching out to 64 times the model radius
        """

        def excess(s: float) -> float:
            return float(self(np.concatenate([xi, s * direction]))) - target

        if excess(0.0) >= 0:
            raise ChartEscapeError(
                f"ρ ≥ {target:g} already on the tangent plane at"
                f" ξ={format_point(xi)}"
            )
        lo, hi = 0.0, self.gamma0
        while excess(hi) < 0:
            lo, hi = hi, 2 * hi
            if hi > 64 * self.gamma0:
                raise ChartEscapeError(
                    f"level ρ = {target:g} not reached along a fibre ray at"
                    f" m={format_point(self.frame.m)}"
                )
        return float(brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps))


@dataclass(frozen=True)
class CutoffProfile:
    epsilon: float
    q: float
    gamma: float
    r: float
    b: float
    #: Start of the exact quadratic tail
    s_quad: float
    #: Fraction of ``(r, s_quad)`` over which ``g`` joins the tail
    theta: float

    @classmethod
    def from_gamma(
        cls,
        epsilon: float,
        q: float,
        gamma: float,
        r_factor: float = DEFAULT_R_FACTOR,
        b_factor: float = DEFAULT_B_FACTOR,
    ) -> CutoffProfile:
        r = r_factor * gamma
        b = b_factor * q * np.pi * r**2
        # θ solves b = (q/2)πr² + qπr²(θ/2 + θ²/7)
        excess = (b - 0.5 * q * np.pi * r**2) / (q * np.pi * r**2)
        theta = (-0.5 + np.sqrt(0.25 + 4 * excess / 7)) * 3.5 if excess > 0 else 0.0
        return cls(
            epsilon=epsilon,
            q=q,
            gamma=gamma,
            r=float(r),
            b=float(b),
            s_quad=float(2 * r),
            theta=float(theta),
        )

    def violations(self) -> list[str]:
        problems = []
        if not self.gamma < self.r < 2 * self.gamma:
            problems.append(
                f"r = {self.r:g} is outside (γ, 2γ) ="
                f" ({self.gamma:g}, {2 * self.gamma:g})"
            )
        lo = 0.5 * self.q * np.pi * self.r**2
        hi = self.q * np.pi * self.r**2
        if not lo < self.b < hi:
            problems.append(
                f"b = {self.b:g} is outside ((q/2)πr², qπr²) = ({lo:g}, {hi:g})"
            )
        if not 0 < self.theta <= 1:
            problems.append(f"tail join fraction {self.theta:g} is outside (0, 1]")
        return problems

    def f(self, rho: ArrayLike) -> FloatArray:
        out: FloatArray = self.b * smoothstep(
            (np.asarray(rho) + self.epsilon) / (2 * self.epsilon)
        )
        return out

    def f_prime(self, rho: ArrayLike) -> FloatArray:
        out: FloatArray = (
            self.b
            * smoothstep_prime((np.asarray(rho) + self.epsilon) / (2 * self.epsilon))
            / (2 * self.epsilon)
        )
        return out

    def f_second(self, rho: ArrayLike) -> FloatArray:
        out: FloatArray = (
            self.b
            * smoothstep_second((np.asarray(rho) + self.epsilon) / (2 * self.epsilon))
            / (2 * self.epsilon) ** 2
        )
        return out

    @property
    def _join(self) -> float:
        return self.theta * (self.s_quad - self.r)

    def _tau(self, s: FloatArray) -> FloatArray:
        out: FloatArray = np.clip((s - self.r) / self._join, 0.0, 1.0)
        return out

    def g(self, s: ArrayLike) -> FloatArray:
        ss = np.asarray(s, dtype=float)
        tau = self._tau(ss)
        span = self._join
        s1 = tau**4 * (2.5 + tau * (-3.0 + tau))
        s2 = tau**5 * (2.0 + tau * (-2.5 + tau * 6 / 7))
        blend = self.b + self.q * np.pi * span * (self.r * s1 + span * s2)
        out: FloatArray = np.where(
            ss >= self.r + span, 0.5 * self.q * np.pi * ss**2, blend
        )
        return out

    def g_prime_over_s(self, s: ArrayLike) -> FloatArray:
        """``g'(s)/s = qπ·S(τ)``; finite at ``s = 0``"""
        tau = self._tau(np.asarray(s, dtype=float))
        out: FloatArray = self.q * np.pi * smoothstep(tau)
        return out

    def g_prime_over_s_slope(self, s: ArrayLike) -> FloatArray:
        """``d/ds (g'(s)/s)``; zero off the join"""
        tau = self._tau(np.asarray(s, dtype=float))
        out: FloatArray = self.q * np.pi * smoothstep_prime(tau) / self._join
        return out

    def g_prime(self, s: ArrayLike) -> FloatArray:
        out: FloatArray = np.asarray(s, dtype=float) * self.g_prime_over_s(s)
        return out

    def to_dict(self) -> dict[str, float]:
        return {
            "epsilon": self.epsilon,
            "q": self.q,
            "gamma": self.gamma,
            "r": self.r,
            "b": self.b,
            "s_quad": self.s_quad,
        }


def outer_radius(level: LevelParameter) -> float:
    """
    ``γ``: the largest ``‖y‖`` on the outer level ``ρ = 1``, sampled along
    fibre rays over tangential offsets ``0, ±extent/2``
    """
    frame = level.frame
    d = frame.normal_basis.shape[1]
    t = frame.tangent_dim
    rng = np.random.default_rng(0)
    dirs = np.vstack([np.eye(d), -np.eye(d), rng.normal(size=(GAMMA_DIRECTIONS, d))])
    dirs /= np.sqrt(np.einsum("si,ij,sj->s", dirs, frame.g_N, dirs))[:, None]
    offsets = [np.zeros(t)]
    for a in range(t):
        unit = np.zeros(t)
        unit[a] = 1 / np.sqrt(frame.g_T[a, a])
        offsets.extend([0.5 * level.extent * unit, -0.5 * level.extent * unit])
    gamma = level.gamma0
    for i, xi in enumerate(offsets):
        for direction in dirs:
            s = level.crossing(xi, direction, 1.0)
            if i == 0 and s > level.extent - level.collar:
                raise ChartEscapeError(
                    f"outer level H = {OUTER_LEVEL:g}ε² leaves the chart at"
                    f" m={format_point(frame.m)} (ε = {level.epsilon:g})"
                )
            gamma = max(gamma, s)
    return float(gamma)


def build_profile(
    system: ModelSystem,
    m: ArrayLike,
    epsilon: float,
    q: float = DEFAULT_Q,
    r_factor: float = DEFAULT_R_FACTOR,
    b_factor: float = DEFAULT_B_FACTOR,
    collar_width: float = DEFAULT_COLLAR_WIDTH,
) -> CutoffProfile:
    return modified_hamiltonian(
        system,
        m,
        epsilon,
        q=q,
        r_factor=r_factor,
        b_factor=b_factor,
        collar_width=collar_width,
    ).profile


@dataclass(frozen=True, eq=False)
class ModifiedHamiltonian:
    level: LevelParameter
    profile: CutoffProfile

    @property
    def system(self) -> ModelSystem:
        return self.level.system

    @property
    def frame(self) -> TangentFrame:
        return self.level.frame

    @property
    def m(self) -> FloatArray:
        return self.frame.m

    def fibre_radius(self, zeta: ArrayLike) -> FloatArray:
        y = np.asarray(zeta, dtype=float)[..., self.frame.tangent_dim :]
        out: FloatArray = np.sqrt(np.einsum("...i,ij,...j->...", y, self.frame.g_N, y))
        return out

    def value(self, zeta: ArrayLike) -> FloatArray:
        rho, _ = self.level.evaluate(zeta)
        prof = self.profile
        out: FloatArray = (prof.f(rho) - prof.b) + prof.g(self.fibre_radius(zeta))
        return out

    def differential(self, zeta: ArrayLike) -> FloatArray:
        zs = np.asarray(zeta, dtype=float)
        rho, drho = self.level.evaluate(zs, differential=True)
        assert drho is not None
        prof = self.profile
        t = self.frame.tangent_dim
        gy = zs[..., t:] @ self.frame.g_N
        tail = prof.g_prime_over_s(self.fibre_radius(zs))[..., None] * gy
        out: FloatArray = prof.f_prime(rho)[..., None] * drho + np.concatenate(
            [np.zeros_like(zs[..., :t]), tail], axis=-1
        )
        return out

    def gradient(self, zeta: ArrayLike) -> FloatArray:
        """``∇h`` with respect to ``g_J(m)``"""
        out: FloatArray = self.differential(zeta) @ self.frame.g_frame_inv
        return out

    def second_differential(self, zeta: ArrayLike) -> FloatArray:
        """
        ``D²h = f''(ρ) dρ⊗dρ + f'(ρ) D²ρ + D²g``.  The shell term
        ``f''(ρ) dρ⊗dρ`` carries the stiffness of ``h`` and is exact; only the
        smooth ``D²ρ`` is differenced.
        """
        zs = np.asarray(zeta, dtype=float)
        level = self.level
        prof = self.profile
        frame = self.frame
        t = frame.tangent_dim
        rho, drho = level.evaluate(zs, differential=True)
        assert drho is not None
        out: FloatArray = prof.f_second(rho)[..., None, None] * (
            drho[..., :, None] * drho[..., None, :]
        )
        bend = prof.f_prime(rho)
        if np.any(bend):
            out += bend[..., None, None] * level.second_differential(zs)
        s = self.fibre_radius(zs)
        gy = zs[..., t:] @ frame.g_N
        safe = np.where(s > 0, s, 1.0)
        out[..., t:, t:] += prof.g_prime_over_s(s)[..., None, None] * frame.g_N + (
            prof.g_prime_over_s_slope(s) / safe
        )[..., None, None] * (gy[..., :, None] * gy[..., None, :])
        return out

    def describe(self) -> dict[str, Any]:
        return {
            "m": [float(v) for v in self.m],
            **self.profile.to_dict(),
            "chart_extent": self.level.extent,
        }


def modified_hamiltonian(
    system: ModelSystem,
    m: ArrayLike,
    epsilon: float,
    q: float = DEFAULT_Q,
    r_factor: float = DEFAULT_R_FACTOR,
    b_factor: float = DEFAULT_B_FACTOR,
    collar_width: float = DEFAULT_COLLAR_WIDTH,
    gauge: Gauge = Gauge.RADIAL,
) -> ModifiedHamiltonian:
    check_q(q, system.n, system.l)
    level = LevelParameter.build(system, m, epsilon, collar_width, gauge)
    gamma = outer_radius(level)
    profile = CutoffProfile.from_gamma(epsilon, q, gamma, r_factor, b_factor)
    if problems := profile.violations():
        raise ProfileWindowError("; ".join(problems))
    log.debug(
        "h_m at m=%s: ε=%g γ=%.6g r=%.6g b=%.6g",
        format_point(level.frame.m),
        epsilon,
        gamma,
        profile.r,
        profile.b,
    )
    return ModifiedHamiltonian(level=level, profile=profile)


def eval_h(hm: ModifiedHamiltonian, z: ArrayLike) -> FloatArray:
    return hm.value(z)


def grad_h(hm: ModifiedHamiltonian, z: ArrayLike) -> FloatArray:
    return hm.gradient(z)


@dataclass(frozen=True, eq=False)
class HamiltonianFamily:
    """``m ↦ h_m`` for fixed ``ε`` and profile parameters"""

    system: ModelSystem
    epsilon: float
    q: float = DEFAULT_Q
    r_factor: float = DEFAULT_R_FACTOR
    b_factor: float = DEFAULT_B_FACTOR
    collar_width: float = DEFAULT_COLLAR_WIDTH
    gauge: Gauge = Gauge.RADIAL
    _cache: dict[tuple[float, ...], ModifiedHamiltonian] = field(
        default_factory=dict, repr=False
    )

    def at(self, m: ArrayLike) -> ModifiedHamiltonian:
        key = tuple(float(v) for v in np.atleast_1d(np.asarray(m, dtype=float)))
        try:
            return self._cache[key]
        except KeyError:
            hm = modified_hamiltonian(
                self.system,
                np.array(key),
                self.epsilon,
                q=self.q,
                r_factor=self.r_factor,
                b_factor=self.b_factor,
                collar_width=self.collar_width,
                gauge=self.gauge,
            )
            if len(self._cache) >= 256:
                self._cache.clear()
            self._cache[key] = hm
            return hm


@dataclass(frozen=True)
class ProfileParameters:
    """Everything but ``ε`` and ``m`` that determines ``h_m``"""

    q: float = DEFAULT_Q
    r_factor: float = DEFAULT_R_FACTOR
    b_factor: float = DEFAULT_B_FACTOR
    collar_width: float = DEFAULT_COLLAR_WIDTH
    gauge: Gauge = Gauge.RADIAL

    def family(self, system: ModelSystem, epsilon: float) -> HamiltonianFamily:
        return HamiltonianFamily(
            system=system,
            epsilon=epsilon,
            q=self.q,
            r_factor=self.r_factor,
            b_factor=self.b_factor,
            collar_width=self.collar_width,
            gauge=self.gauge,
        )


def _check_base(hm: ModifiedHamiltonian, z: FourierLoop) -> None:
    if z.frame is not hm.frame and not np.array_equal(z.m, hm.m):
        raise ValueError(
            f"loop over m={format_point(z.m)} paired with h_m at"
            f" m={format_point(hm.m)}"
        )


def _modes(K: int) -> FloatArray:
    out: FloatArray = np.arange(-K, K + 1, dtype=float)
    return out


def _area(frame: TangentFrame, coeffs: FloatArray) -> FloatArray:
    """``½(‖z⁺‖² − ‖z⁻‖²)`` computed on coefficients"""
    per_mode = np.einsum("...ki,ij,...kj->...k", coeffs, frame.g_frame, coeffs)
    out: FloatArray = np.pi * (per_mode @ _modes(coeffs.shape[-2] // 2))
    return out


def batch_action(
    hm: ModifiedHamiltonian, coeffs: FloatArray, oversample: int = DEFAULT_OVERSAMPLE
) -> FloatArray:
    """``F_m`` on a stack of coefficient tables over the base point of ``hm``"""
    K = coeffs.shape[-2] // 2
    samples = synthesize_coefficients(hm.frame, coeffs, time_grid(K, oversample))
    out: FloatArray = _area(hm.frame, coeffs) - np.mean(hm.value(samples), axis=-1)
    return out


def batch_action_and_gradient(
    hm: ModifiedHamiltonian, coeffs: FloatArray, oversample: int = DEFAULT_OVERSAMPLE
) -> tuple[FloatArray, FloatArray]:
    """
    ``F_m`` and coefficient tables of its ``H^{1/2}`` fibre gradient
    ``z⁺ − z⁻ − j*∇h_m(z)``, for a stack of coefficient tables
    """
    frame = hm.frame
    K = coeffs.shape[-2] // 2
    samples = synthesize_coefficients(frame, coeffs, time_grid(K, oversample))
    values = _area(frame, coeffs) - np.mean(hm.value(samples), axis=-1)
    return values, _fibre_gradient(frame, coeffs, hm.gradient(samples))


def h_half_weights(K: int) -> FloatArray:
    """``2π|k|`` per mode, with weight 1 on the mean"""
    out: FloatArray = 2 * np.pi * np.abs(_modes(K))
    out[K] = 1.0
    return out


def _fibre_gradient(
    frame: TangentFrame, coeffs: FloatArray, forces: FloatArray
) -> FloatArray:
    """``z⁺ − z⁻ − j*(forces)`` for force samples on the uniform time grid"""
    K = coeffs.shape[-2] // 2
    # j*: divide mode k by 2π|k|, keep the mean, drop its tangential part
    force = fit_coefficients(frame, forces, K) / h_half_weights(K)[:, None]
    force[..., K, : frame.tangent_dim] = 0.0
    sign = np.sign(_modes(K))[:, None]
    grads = sign * coeffs - force
    grads[..., K, : frame.tangent_dim] = 0.0
    return grads


def gradient_jacobian(
    hm: ModifiedHamiltonian, coeffs: FloatArray, oversample: int = DEFAULT_OVERSAMPLE
) -> FloatArray:
    """
    Jacobian of the free entries of the fibre gradient with respect to the
    free coefficients (the `FourierLoop.to_vector` layout), from the
    pointwise ``D²h`` along the loop
    """
    frame = hm.frame
    K = coeffs.shape[-2] // 2
    mask = free_mask(frame, K)
    grid = time_grid(K, oversample)
    samples = synthesize_coefficients(frame, coeffs, grid)
    local = hm.second_differential(samples) @ frame.g_frame_inv
    size = int(mask.sum())
    basis = np.zeros((size, *mask.shape))
    basis[:, mask] = np.eye(size)
    moved = synthesize_coefficients(frame, basis, grid)
    pushed = np.einsum("pti,tij->ptj", moved, local)
    out: FloatArray = _fibre_gradient(frame, basis, pushed)[:, mask].T
    return out


def eval_action(
    hm: ModifiedHamiltonian, z: FourierLoop, oversample: int = DEFAULT_OVERSAMPLE
) -> float:
    _check_base(hm, z)
    return float(batch_action(hm, np.asarray(z.coeffs), oversample))


def action_and_gradient(
    hm: ModifiedHamiltonian, z: FourierLoop, oversample: int = DEFAULT_OVERSAMPLE
) -> tuple[float, FourierLoop]:
    """``F_m(z)`` and its ``H^{1/2}`` fibre gradient from one set of samples"""
    _check_base(hm, z)
    value, grad = batch_action_and_gradient(hm, np.asarray(z.coeffs), oversample)
    return float(value), z.with_coeffs(grad)


def grad_action_fibre(
    hm: ModifiedHamiltonian, z: FourierLoop, oversample: int = DEFAULT_OVERSAMPLE
) -> FourierLoop:
    return action_and_gradient(hm, z, oversample)[1]


def grad_action_base(
    family: HamiltonianFamily,
    z: FourierLoop,
    oversample: int = DEFAULT_OVERSAMPLE,
    step: float = BASE_FD_STEP,
) -> FloatArray:
    """
    Central differences of ``m ↦ F_m(z)`` with the coefficient array of ``z``
    held fixed in the flat-torus trivialization
    """
    t = z.frame.tangent_dim
    grad = np.zeros(t)
    for a in range(t):
        shift = np.zeros(t)
        shift[a] = step
        values = []
        for sign in (1, -1):
            hm = family.at(z.m + sign * shift)
            values.append(eval_action(hm, z.rebase(hm.frame), oversample))
        grad[a] = (values[0] - values[1]) / (2 * step)
    return grad


@dataclass
class BoundsReport:
    samples: int
    u1_violations: int = 0
    u2_violations: int = 0
    #: Largest ``‖∇h‖/‖z‖`` over the sample
    measured_c1: float = 0.0
    #: Largest ``‖∇_T h‖`` over the sample
    tangential_gradient: float = 0.0
    worst_u1_excess: float = 0.0

    @property
    def u1_ok(self) -> bool:
        return self.u1_violations == 0

    @property
    def u2_ok(self) -> bool:
        return self.u2_violations == 0 and bool(np.isfinite(self.measured_c1))

    def __bool__(self) -> bool:
        return bool(self.u1_ok and self.u2_ok)

    def get_summary(self) -> str:
        return (
            f"{quantify(self.samples, 'sample')}: c₁ = {self.measured_c1:.4g},"
            f" max ‖∇_T h‖ = {self.tangential_gradient:.3g},"
            f" {quantify(self.u1_violations, '(u1) violation')},"
            f" {quantify(self.u2_violations, '(u2) violation')}"
        )

    def check(self) -> None:
        errors: list[str] = []
        if self.u1_violations:
            errors.append(
                f"{quantify(self.u1_violations, 'sample')} violated"
                f" |h − (q/2)π‖y‖²| ≤ b"
                f" (worst excess {self.worst_u1_excess:g})"
            )
        if not self.u2_ok:
            errors.append("gradient of h_m is not linearly bounded")
        if errors:
            raise BoundsViolationError(
                f"Growth bounds of h_m fail: {'; '.join(errors)}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "samples": self.samples,
            "u1_ok": self.u1_ok,
            "u2_ok": self.u2_ok,
            "measured_c1": self.measured_c1,
            "tangential_gradient": self.tangential_gradient,
        }


def verify_bounds(
    hm: ModifiedHamiltonian, sample_count: int = MIN_BOUND_SAMPLES, seed: int = 0
) -> BoundsReport:
    """
    Samples ``T_mW`` over the ``g_J``-ball of radius ``4·s_quad`` and tests
    ``|h − (q/2)π‖y‖²| ≤ b`` and ``‖∇h‖ ≤ c₁‖z‖``
    """
    if sample_count < MIN_BOUND_SAMPLES:
        raise ConfigError(f"bounds sweep needs at least {MIN_BOUND_SAMPLES} samples")
    frame = hm.frame
    prof = hm.profile
    dim = frame.g_frame.shape[0]
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(sample_count, dim))
    dirs /= np.sqrt(np.einsum("si,ij,sj->s", dirs, frame.g_frame, dirs))[:, None]
    radii = 4 * prof.s_quad * rng.uniform(size=sample_count) ** (1 / dim)
    pts = np.vstack([np.zeros((1, dim)), dirs * radii[:, None]])
    h = hm.value(pts)
    tail = 0.5 * prof.q * np.pi * hm.fibre_radius(pts) ** 2
    tol = 1e-12 * max(1.0, prof.b)
    excess = np.abs(h - tail) - prof.b
    report = BoundsReport(samples=len(pts))
    report.u1_violations = int(np.sum(excess > tol))
    report.worst_u1_excess = float(max(np.max(excess), 0.0))
    grad = hm.gradient(pts)
    gnorm = np.sqrt(np.einsum("si,ij,sj->s", grad, frame.g_frame, grad))
    znorm = np.sqrt(np.einsum("si,ij,sj->s", pts, frame.g_frame, pts))
    away = znorm > 1e-8
    report.u2_violations = int(np.sum(~np.isfinite(gnorm)))
    report.measured_c1 = float(np.max(gnorm[away] / znorm[away]))
    t = frame.tangent_dim
    if t:
        gt = grad[:, :t]
        report.tangential_gradient = float(
            np.max(np.sqrt(np.einsum("si,ij,sj->s", gt, frame.g_T, gt)))
        )
    log.debug("Bounds sweep at m=%s: %s", format_point(hm.m), report.get_summary())
    return report
