"""
Linking sets, the negative gradient flow of ``F_m`` and the minimax search

``Σ`` is sampled on the slice spanned by a unit ``k = −1`` normal mode
``ê⁻``, a unit constant normal vector ``ê⁰`` and ``s·e⁺_N`` with
``s ∈ [0, τ]``; ``Γ`` is sampled on the sphere ``‖z‖² = α`` in ``E⁺_N``.
The sampled ``Σ`` is pushed down by the flow until its sup plateaus, and the
point realizing the sup is then captured onto a critical loop.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import least_squares, minimize_scalar

from .action import (
    HamiltonianFamily,
    ModifiedHamiltonian,
    batch_action,
    batch_action_and_gradient,
    grad_action_base,
    gradient_jacobian,
    h_half_weights,
    is_even_integer,
)
from .consts import (
    ALPHA_FLOOR,
    BETA_FRACTION,
    BOUNDARY_TOL,
    CAPTURE_RADIUS_RATIO,
    DEFAULT_ALPHA,
    DEFAULT_BUDGET,
    DEFAULT_CAPTURE,
    DEFAULT_DT,
    DEFAULT_GAMMA_SAMPLES,
    DEFAULT_K,
    DEFAULT_NEWTON_MAX_ITER,
    DEFAULT_OVERSAMPLE,
    DEFAULT_PLATEAU_RTOL,
    DEFAULT_PLATEAU_WINDOW,
    DEFAULT_SIGMA_GRID,
    DEFAULT_TAU_MARGIN,
    DEFAULT_TOL_GRAD,
    DEFAULT_TOL_VALUE,
    DT_GROWTH,
    DT_MIN,
    GAMMA_MODES,
    LEVEL_SCAN,
    MAX_MOVE_FRACTION,
    NULLITY_TOL,
    PS_RATIO,
)
from .errors import (
    CaptureError,
    InadmissibleQError,
    LinkingError,
    NewtonDivergenceError,
    StepUnderflowError,
    UnconvergedError,
)
from .geometry import TangentFrame, spd_powers
from .logging import PrefixedLogger, log
from .loops import (
    FourierLoop,
    e_N_plus,
    fit_coefficients,
    free_mask,
    synthesize_coefficients,
    time_grid,
)
from .util import FloatArray, format_point, quantify, sym


@dataclass(frozen=True)
class SearchSettings:
    K: int = DEFAULT_K
    oversample: int = DEFAULT_OVERSAMPLE
    alpha: float = DEFAULT_ALPHA
    tau_margin: float = DEFAULT_TAU_MARGIN
    #: Gradient evaluations (one per front point per stage)
    budget: int = DEFAULT_BUDGET
    plateau_window: int = DEFAULT_PLATEAU_WINDOW
    plateau_rtol: float = DEFAULT_PLATEAU_RTOL
    dt: float = DEFAULT_DT
    dt_min: float = DT_MIN
    tol_grad: float = DEFAULT_TOL_GRAD
    tol_value: float = DEFAULT_TOL_VALUE
    capture: float = DEFAULT_CAPTURE
    sigma_grid: tuple[int, int, int] = DEFAULT_SIGMA_GRID
    gamma_samples: int = DEFAULT_GAMMA_SAMPLES
    base_flow: bool = False
    newton_max_iter: int = DEFAULT_NEWTON_MAX_ITER
    seed: int = 0


@dataclass(frozen=True, eq=False)
class LinkingConfig:
    tau: float
    alpha: float
    beta_floor: float
    #: ``(P, 2K + 1, 2n)`` coefficient tables of the sampled ``Σ``
    sigma_sample: FloatArray
    #: Which rows of ``sigma_sample`` lie on ``∂Σ``
    sigma_boundary: np.ndarray
    gamma_sample: FloatArray
    boundary_sup: float
    #: Which sufficiency condition on ``τ`` binds: ``"2b"`` or ``"tail"``
    tau_branch: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "tau": self.tau,
            "alpha": self.alpha,
            "beta_floor": self.beta_floor,
            "boundary_sup": self.boundary_sup,
            "tau_branch": self.tau_branch,
            "sigma_points": len(self.sigma_sample),
            "gamma_points": len(self.gamma_sample),
        }


def _unit_modes(
    frame: TangentFrame, K: int
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Unit ``ê⁻``, unit ``ê⁰`` and ``e⁺_N`` coefficient tables"""
    e_plus = np.array(e_N_plus(frame, K).coeffs)
    v = e_plus[K + 1]
    e_minus = np.zeros_like(e_plus)
    e_minus[K - 1] = v / np.sqrt(2 * np.pi)
    e_zero = np.zeros_like(e_plus)
    e_zero[K] = v
    return e_minus, e_zero, e_plus


def tau_for(
    hm: ModifiedHamiltonian, margin: float = DEFAULT_TAU_MARGIN
) -> tuple[float, str]:
    prof = hm.profile
    tail = prof.b / ((prof.q / 2) * np.pi - np.pi)
    if 2 * prof.b >= tail:
        return float(margin * np.sqrt(2 * prof.b)), "2b"
    return float(margin * np.sqrt(tail)), "tail"


def sigma_sample(
    frame: TangentFrame, K: int, tau: float, grid: tuple[int, int, int]
) -> tuple[FloatArray, np.ndarray]:
    e_minus, e_zero, e_plus = _unit_modes(frame, K)
    na, nb, ns = grid
    points = []
    boundary = []
    for a in np.linspace(-tau, tau, na):
        for b in np.linspace(-tau, tau, nb):
            if a * a + b * b > tau * tau * (1 + 1e-12):
                continue
            rim = a * a + b * b >= tau * tau * (1 - 1e-12)
            for i, s in enumerate(np.linspace(0, tau, ns)):
                points.append(a * e_minus + b * e_zero + s * e_plus)
                boundary.append(rim or i in (0, ns - 1))
    return np.array(points), np.array(boundary)


def gamma_sample(
    frame: TangentFrame, K: int, alpha: float, count: int, seed: int
) -> FloatArray:
    """
    Points of ``{‖z‖² = α} ∩ E⁺_N`` on modes ``1..GAMMA_MODES``, plus
    ``e⁺_N``
    """
    rng = np.random.default_rng(seed)
    t = frame.tangent_dim
    dim = frame.basis.shape[0]
    top = min(GAMMA_MODES, K)
    tables = [np.array(e_N_plus(frame, K).coeffs)]
    weights = 2 * np.pi * np.arange(1, top + 1)
    for _ in range(count - 1):
        c = np.zeros((2 * K + 1, dim))
        c[K + 1 : K + 1 + top, t:] = rng.normal(size=(top, dim - t))
        tables.append(c)
    out = np.array(tables)
    gn = frame.g_frame
    band = out[:, K + 1 : K + 1 + top]
    norms = np.einsum("pki,ij,pkj->pk", band, gn, band)
    out *= np.sqrt(alpha / (norms @ weights))[:, None, None]
    return out


def choose_parameters(
    hm: ModifiedHamiltonian, settings: SearchSettings = SearchSettings()
) -> LinkingConfig:
    """
    Sizes ``Σ`` so that ``F ≤ 0`` on its boundary and picks ``α`` so that
    ``F ≥ α/4`` on ``Γ``, halving ``α`` as needed
    """
    tau, branch = tau_for(hm, settings.tau_margin)
    K = settings.K
    sigma, rim = sigma_sample(hm.frame, K, tau, settings.sigma_grid)
    boundary_sup = float(np.max(batch_action(hm, sigma[rim], settings.oversample)))
    if boundary_sup > BOUNDARY_TOL:
        raise LinkingError(
            f"F reaches {boundary_sup:g} > 0 on the boundary of Σ (τ = {tau:g})"
        )
    alpha = min(settings.alpha, tau**2 / 4)
    while True:
        gamma = gamma_sample(hm.frame, K, alpha, settings.gamma_samples, settings.seed)
        beta = float(np.min(batch_action(hm, gamma, settings.oversample)))
        if beta >= BETA_FRACTION * alpha:
            break
        alpha /= 2
        if alpha < ALPHA_FLOOR:
            raise LinkingError(
                f"F stays below α/4 on Γ down to α = {alpha:g}; h_m is not flat"
                " near the zero section"
            )
    log.debug(
        "Linking at m=%s: τ=%.6g (%s branch), α=%.6g, β=%.6g, sup F|∂Σ=%.3g",
        format_point(hm.m),
        tau,
        branch,
        alpha,
        beta,
        boundary_sup,
    )
    return LinkingConfig(
        tau=tau,
        alpha=alpha,
        beta_floor=beta,
        sigma_sample=sigma,
        sigma_boundary=rim,
        gamma_sample=gamma,
        boundary_sup=boundary_sup,
        tau_branch=branch,
    )


@dataclass(frozen=True, eq=False)
class FlowRecord:
    """The sup of ``F`` over the front at one flow time, and the point at it"""

    time: float
    sup_value: float
    front_size: int
    #: ``‖∇F‖_{1/2}`` and ``‖z‖_{1/2}`` at the sup point
    grad_norm: float
    norm: float
    sup_point: FloatArray

    @classmethod
    def of_front(
        cls,
        frame: TangentFrame,
        time: float,
        front: FloatArray,
        values: FloatArray,
        grads: FloatArray,
    ) -> FlowRecord:
        i = int(np.argmax(values))
        return cls(
            time=time,
            sup_value=float(values[i]),
            front_size=len(front),
            grad_norm=float(_h_half_norms(frame, grads[i])),
            norm=float(_h_half_norms(frame, front[i])),
            sup_point=np.array(front[i]),
        )

    def as_row(self) -> list[float | int]:
        return [self.time, self.sup_value, self.front_size]


@dataclass(frozen=True, eq=False)
class MinimaxState:
    family: HamiltonianFamily
    hm: ModifiedHamiltonian
    #: ``(P, 2K + 1, 2n)`` coefficient tables, all over ``hm.m``
    front: FloatArray
    values: FloatArray
    grads: FloatArray
    time: float = 0.0
    dt: float = DEFAULT_DT
    evaluations: int = 0
    history: tuple[FlowRecord, ...] = ()
    dt_min: float = DT_MIN
    oversample: int = DEFAULT_OVERSAMPLE
    base_flow: bool = False

    @classmethod
    def start(
        cls,
        family: HamiltonianFamily,
        hm: ModifiedHamiltonian,
        front: FloatArray,
        settings: SearchSettings,
    ) -> MinimaxState:
        values, grads = batch_action_and_gradient(hm, front, settings.oversample)
        return cls(
            family=family,
            hm=hm,
            front=front,
            values=values,
            grads=grads,
            dt=settings.dt,
            dt_min=settings.dt_min,
            evaluations=len(front),
            history=(FlowRecord.of_front(hm.frame, 0.0, front, values, grads),),
            oversample=settings.oversample,
            base_flow=settings.base_flow,
        )

    @property
    def m(self) -> FloatArray:
        return self.hm.m

    @property
    def sup_value(self) -> float:
        return float(np.max(self.values))

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.values))

    def loop(self, i: int) -> FourierLoop:
        return FourierLoop(frame=self.hm.frame, coeffs=self.front[i])

    def grad_norms(self) -> FloatArray:
        return _h_half_norms(self.hm.frame, self.grads)


def _h_half_norms(frame: TangentFrame, coeffs: FloatArray) -> FloatArray:
    per_mode = np.einsum("...ki,ij,...kj->...k", coeffs, frame.g_frame, coeffs)
    out: FloatArray = np.sqrt(per_mode @ h_half_weights(coeffs.shape[-2] // 2))
    return out


def _base_gradient(state: MinimaxState) -> FloatArray:
    if not state.base_flow or state.hm.frame.tangent_dim == 0:
        return np.zeros(state.hm.frame.tangent_dim)
    return grad_action_base(state.family, state.loop(state.argmax), state.oversample)


def _evaluate(
    state: MinimaxState, m: FloatArray, front: FloatArray
) -> tuple[ModifiedHamiltonian, FloatArray, FloatArray]:
    hm = state.hm if np.array_equal(m, state.m) else state.family.at(m)
    values, grads = batch_action_and_gradient(hm, front, state.oversample)
    return hm, values, grads


def flow_step(state: MinimaxState, dt: float | None = None) -> MinimaxState:
    """
    One explicit-midpoint step of ``ż = −∇F``, ``ṁ = −∇_m F``; the step is
    halved until the sup of ``F`` over the front does not increase
    """
    if dt is None:
        dt = state.dt
    if not dt > 0:
        raise ValueError("flow step needs dt > 0")
    base_grad = _base_gradient(state)
    evaluations = state.evaluations
    while True:
        half = 0.5 * dt
        m_mid = state.m - half * base_grad
        _, _, grads_mid = _evaluate(state, m_mid, state.front - half * state.grads)
        m_new = state.m - dt * base_grad
        front_new = state.front - dt * grads_mid
        hm_new, values_new, grads_new = _evaluate(state, m_new, front_new)
        evaluations += 2 * len(state.front)
        sup_new = float(np.max(values_new))
        if sup_new <= state.sup_value + 1e-15 * max(1.0, abs(state.sup_value)):
            break
        dt = half
        if dt < state.dt_min:
            worst = int(np.argmax(values_new))
            raise StepUnderflowError(
                f"flow step underflow at t={state.time:g}: front point {worst}"
                f" (F = {float(values_new[worst]):g}) keeps raising the sup"
            )
    time = state.time + dt
    return replace(
        state,
        hm=hm_new,
        front=front_new,
        values=values_new,
        grads=grads_new,
        time=time,
        dt=dt,
        evaluations=evaluations,
        history=(
            *state.history,
            FlowRecord.of_front(hm_new.frame, time, front_new, values_new, grads_new),
        ),
    )


def linking_distance(frame: TangentFrame, front: FloatArray, alpha: float) -> float:
    """
    ``min`` over the front of the distance to ``Γ``, through
    ``‖z − z⁺_N‖² + (‖z⁺_N‖ − √α)²``
    """
    K = front.shape[-2] // 2
    t = frame.tangent_dim
    plus = np.zeros_like(front)
    plus[:, K + 1 :, t:] = front[:, K + 1 :, t:]
    rest = _h_half_norms(frame, front - plus)
    pn = _h_half_norms(frame, plus)
    return float(np.min(np.sqrt(rest**2 + (pn - np.sqrt(alpha)) ** 2)))


@dataclass(frozen=True, eq=False)
class CriticalCandidate:
    m: FloatArray
    z: FourierLoop
    value: float
    grad_norm: float
    #: Gradient norm after Newton polishing
    polish_residual: float = np.inf
    newton_iterations: int = 0
    #: Dimension of the numerical kernel of the Hessian of ``F``
    nullity: int = 0
    converged: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "m": [float(v) for v in self.m],
            "value": self.value,
            "grad_norm": self.grad_norm,
            "polish_residual": self.polish_residual,
            "newton_iterations": self.newton_iterations,
            "nullity": self.nullity,
            "converged": self.converged,
        }


def _candidate(
    hm: ModifiedHamiltonian, coeffs: FloatArray, oversample: int
) -> CriticalCandidate:
    value, grad = batch_action_and_gradient(hm, coeffs, oversample)
    return CriticalCandidate(
        m=hm.m,
        z=FourierLoop(frame=hm.frame, coeffs=coeffs),
        value=float(value),
        grad_norm=float(_h_half_norms(hm.frame, grad)),
    )


def _gradient_vector(
    hm: ModifiedHamiltonian, x: FloatArray, K: int, oversample: int
) -> FloatArray:
    z = FourierLoop.from_vector(hm.frame, K, x)
    _, grad = batch_action_and_gradient(hm, np.asarray(z.coeffs), oversample)
    out: FloatArray = grad[free_mask(hm.frame, K)]
    return out


def _weights_vector(frame: TangentFrame, K: int) -> FloatArray:
    """Per-entry ``H^{1/2}`` weights in an orthonormal frame of ``g_J``"""
    w = h_half_weights(K)
    table = np.broadcast_to(w[:, None], (2 * K + 1, frame.basis.shape[0]))
    out: FloatArray = table[free_mask(frame, K)]
    return out


def _gram(frame: TangentFrame, K: int) -> FloatArray:
    """The ``H^{1/2}`` inner product on free coefficients"""
    flat = free_mask(frame, K).ravel()
    full = np.kron(np.diag(h_half_weights(K)), frame.g_frame)
    out: FloatArray = full[np.ix_(flat, flat)]
    return out


def hessian_spectrum(frame: TangentFrame, K: int, jac: FloatArray) -> FloatArray:
    """
    Eigenvalues of the Hessian of ``F`` in ``H^{1/2}``-orthonormal coordinates,
    given the Jacobian ``jac`` of the gradient (`gradient_jacobian`)
    """
    root, inv_root = spd_powers(_gram(frame, K), "H^{1/2} Gram matrix")
    out: FloatArray = np.linalg.eigvalsh(sym(root @ jac @ inv_root))
    return out


def nullity(frame: TangentFrame, K: int, jac: FloatArray) -> int:
    return int(np.sum(np.abs(hessian_spectrum(frame, K, jac)) < NULLITY_TOL))


def _phase_row(frame: TangentFrame, K: int, x: FloatArray) -> FloatArray | None:
    """Unit vector along ``ż``, the infinitesimal time shift of the loop"""
    shift = FourierLoop.from_vector(frame, K, x).derivative().to_vector()
    size = float(np.linalg.norm(shift))
    if size <= 1e-300:
        return None
    out: FloatArray = shift / size
    return out


def polish_critical(
    hm: ModifiedHamiltonian,
    candidate: CriticalCandidate,
    settings: SearchSettings = SearchSettings(),
) -> CriticalCandidate:
    """
    Newton's method on ``∇F = 0`` in coefficient space, with the analytic
    Jacobian, a phase condition ``⟨δ, ż⟩ = 0`` against the time-shift
    symmetry and backtracking on ``‖∇F‖``.  Fails unless the Hessian kernel
    at the result is at most the time-shift direction.
    """
    if candidate.grad_norm > settings.capture:
        raise CaptureError(
            f"candidate gradient {candidate.grad_norm:g} exceeds the capture"
            f" threshold {settings.capture:g}"
        )
    K = candidate.z.K
    frame = hm.frame
    x = candidate.z.to_vector()
    current = candidate
    iterations = 0
    plog = log.sublogger(f"m={format_point(hm.m)}")
    while current.grad_norm > settings.tol_grad:
        if iterations >= settings.newton_max_iter:
            break
        iterations += 1
        g = _gradient_vector(hm, x, K, settings.oversample)
        jac = gradient_jacobian(hm, np.asarray(current.z.coeffs), settings.oversample)
        row = _phase_row(frame, K, x)
        if row is not None:
            jac = np.vstack([jac, row])
            g = np.append(g, 0.0)
        step, *_ = np.linalg.lstsq(jac, -g, rcond=None)
        lam = 1.0
        while True:
            trial = _candidate(
                hm,
                np.asarray(FourierLoop.from_vector(frame, K, x + lam * step).coeffs),
                settings.oversample,
            )
            if trial.grad_norm < current.grad_norm or lam < 1e-4:
                break
            lam /= 2
        plog.debug(
            "Newton iteration %d: ‖∇F‖ %.3e -> %.3e (damping %g)",
            iterations,
            current.grad_norm,
            trial.grad_norm,
            lam,
        )
        if trial.grad_norm >= current.grad_norm:
            break
        x = x + lam * step
        current = trial
    if current.grad_norm > settings.tol_grad:
        raise NewtonDivergenceError(
            f"Newton stalled at ‖∇F‖ = {current.grad_norm:.3e} after"
            f" {quantify(iterations, 'iteration')}"
        )
    kernel = nullity(
        frame,
        K,
        gradient_jacobian(hm, np.asarray(current.z.coeffs), settings.oversample),
    )
    if kernel > 1:
        raise NewtonDivergenceError(
            f"F has a degenerate critical set at m={format_point(hm.m)}: Hessian"
            f" nullity {kernel} beyond the time-shift symmetry (resonance)"
        )
    return replace(
        current,
        polish_residual=current.grad_norm,
        newton_iterations=iterations,
        nullity=kernel,
        converged=True,
    )


def level_loop(
    hm: ModifiedHamiltonian,
    shape: FloatArray,
    rho: float,
    oversample: int = DEFAULT_OVERSAMPLE,
    passes: int = 3,
) -> FloatArray:
    """
    The loop with the time profile of ``shape``, pushed along rays from the
    origin onto the level ``ρ = rho``
    """
    frame = hm.frame
    K = shape.shape[-2] // 2
    grid = time_grid(K, oversample)
    coeffs = np.array(shape)
    for _ in range(passes):
        samples = synthesize_coefficients(frame, coeffs, grid)
        coeffs = fit_coefficients(frame, hm.level.project(samples, rho), K)
        coeffs[K, : frame.tangent_dim] = 0.0
    return coeffs


def level_peak(
    hm: ModifiedHamiltonian, shape: FloatArray, oversample: int = DEFAULT_OVERSAMPLE
) -> tuple[float, FloatArray]:
    """
    Maximizes ``F`` over the level loops of ``shape``, parametrized by the
    shell coordinate ``v = (ρ + ε)/2ε``; returns ``v`` and the loop
    """
    eps = hm.level.epsilon

    def loop_at(v: float) -> FloatArray:
        return level_loop(hm, shape, eps * (2 * v - 1), oversample)

    lo, hi, count = LEVEL_SCAN
    scan = np.linspace(lo, hi, count)
    loops = np.array([loop_at(v) for v in scan])
    values = batch_action(hm, loops, oversample)
    i = int(np.argmax(values))
    res = minimize_scalar(
        lambda v: -float(batch_action(hm, loop_at(v), oversample)),
        bounds=(scan[max(i - 1, 0)], scan[min(i + 1, count - 1)]),
        method="bounded",
        options={"xatol": 1e-12},
    )
    if -res.fun >= values[i]:
        return float(res.x), loop_at(float(res.x))
    return float(scan[i]), np.array(loops[i])


def _capture_shape(frame: TangentFrame, point: FloatArray) -> FloatArray:
    K = point.shape[-2] // 2
    samples = synthesize_coefficients(frame, point, time_grid(K, DEFAULT_OVERSAMPLE))
    radius = np.sqrt(np.einsum("ti,ij,tj->t", samples, frame.g_frame, samples))
    if np.min(radius) > CAPTURE_RADIUS_RATIO * np.max(radius):
        return point
    t = frame.tangent_dim
    ring = np.zeros_like(point)
    ring[K + 1, t:] = point[K + 1, t:]
    if not ring.any():
        return np.array(e_N_plus(frame, K).coeffs)
    return ring


def _refine(
    hm: ModifiedHamiltonian, coeffs: FloatArray, settings: SearchSettings
) -> FloatArray:
    """Levenberg–Marquardt on the ``H^{1/2}``-weighted gradient"""
    K = coeffs.shape[-2] // 2
    frame = hm.frame
    root_w = np.sqrt(_weights_vector(frame, K))

    def residual(x: FloatArray) -> FloatArray:
        out: FloatArray = root_w * _gradient_vector(hm, x, K, settings.oversample)
        return out

    def jacobian(x: FloatArray) -> FloatArray:
        table = np.asarray(FourierLoop.from_vector(frame, K, x).coeffs)
        out: FloatArray = root_w[:, None] * gradient_jacobian(
            hm, table, settings.oversample
        )
        return out

    x0 = FourierLoop(frame=frame, coeffs=coeffs).to_vector()
    res = least_squares(
        residual, x0, jac=jacobian, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15
    )
    return np.array(FourierLoop.from_vector(frame, K, res.x).coeffs)


def capture(
    hm: ModifiedHamiltonian,
    point: FloatArray,
    settings: SearchSettings = SearchSettings(),
    plog: PrefixedLogger = log,
) -> CriticalCandidate:
    """
    Carries a loop (normally the sup point of the flowed front) to the
    critical loop next to it: the level peak of its profile, then
    Levenberg–Marquardt on ``∇F``.  The result still has to be polished.
    """
    v, coeffs = level_peak(hm, _capture_shape(hm.frame, point), settings.oversample)
    candidate = _candidate(hm, coeffs, settings.oversample)
    plog.debug(
        "Level peak at v=%.8g: F = %.10g, ‖∇F‖ = %.3e",
        v,
        candidate.value,
        candidate.grad_norm,
    )
    if candidate.grad_norm > settings.tol_grad:
        candidate = _candidate(hm, _refine(hm, coeffs, settings), settings.oversample)
        plog.debug("Least-squares refinement: ‖∇F‖ = %.3e", candidate.grad_norm)
    return candidate


def mean_force(
    hm: ModifiedHamiltonian, coeffs: FloatArray, oversample: int = DEFAULT_OVERSAMPLE
) -> FloatArray:
    """
    Tangential part of the time average of ``∇h_m`` along a loop; a critical
    loop of ``F_m`` solves ``ż = J∇h_m`` exactly when this vanishes
    """
    K = coeffs.shape[-2] // 2
    samples = synthesize_coefficients(hm.frame, coeffs, time_grid(K, oversample))
    out: FloatArray = np.mean(hm.gradient(samples), axis=-2)[
        ..., : hm.frame.tangent_dim
    ]
    return out


def base_polish(
    family: HamiltonianFamily,
    candidate: CriticalCandidate,
    settings: SearchSettings = SearchSettings(),
    plog: PrefixedLogger = log,
) -> CriticalCandidate:
    """
    Moves the base point until the polished critical loop over it has zero
    tangential mean force, recapturing and polishing the loop at every trial
    base point
    """
    if candidate.m.size == 0:
        return candidate
    hm = family.at(candidate.m)
    force = mean_force(hm, np.asarray(candidate.z.coeffs), settings.oversample)
    if np.max(np.abs(force), initial=0.0) <= settings.tol_grad:
        return candidate
    plog.debug(
        "Tangential mean force %.3e at m=%s; moving the base point",
        float(np.max(np.abs(force))),
        format_point(candidate.m),
    )
    latest = [candidate]

    def recapture(hm: ModifiedHamiltonian) -> CriticalCandidate:
        return capture(hm, np.asarray(latest[-1].z.coeffs), settings, plog)

    def residual(m: FloatArray) -> FloatArray:
        hm = family.at(m)
        polished = polish_critical(hm, recapture(hm), settings)
        latest.append(polished)
        return mean_force(hm, np.asarray(polished.z.coeffs), settings.oversample)

    res = least_squares(
        residual, candidate.m, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15
    )
    hm = family.at(res.x)
    final = polish_critical(hm, recapture(hm), settings)
    force = mean_force(hm, np.asarray(final.z.coeffs), settings.oversample)
    plog.debug(
        "Base point settled at m=%s after %s (mean force %.3e)",
        format_point(final.m),
        quantify(res.nfev, "evaluation"),
        float(np.max(np.abs(force))),
    )
    return final


@dataclass(frozen=True)
class QSpectrumReport:
    q: float
    K: int
    #: ``min_k |qπ − 2πk|`` over ``k = −K..K``
    margin: float

    def to_dict(self) -> dict[str, Any]:
        return {"q": self.q, "K": self.K, "resonance_margin": self.margin}


def spectral_q_check(K: int, q: float) -> QSpectrumReport:
    """
    Distance of ``qπ`` from the spectrum ``{2πk}`` of ``u ↦ Ju̇`` on normal
    modes of order ``≤ K``
    """
    if is_even_integer(q):
        raise InadmissibleQError(
            f"q = {q:g} is an even integer: qπ lies in the spectrum 2πℤ of the"
            " loop operator"
        )
    ks = np.arange(-K, K + 1)
    margin = float(np.min(np.abs(q * np.pi - 2 * np.pi * ks)))
    return QSpectrumReport(q=q, K=K, margin=margin)


@dataclass
class PalaisSmaleReport:
    points: int = 0
    near_critical: int = 0
    #: Largest ``‖z‖_{1/2}`` over the near-critical subsequence
    max_norm: float = 0.0
    #: Norm beyond which ``h_m`` is purely quadratic on single-mode loops
    tail_norm: float = 0.0
    #: ``‖Δ(z⁺ − z⁻)‖`` between the last two near-critical points
    cauchy_gap: float = 0.0
    escaping: int = 0

    @property
    def bounded(self) -> bool:
        return self.escaping == 0

    @property
    def flagged(self) -> bool:
        return not self.bounded

    def __bool__(self) -> bool:
        return self.points > 0

    def get_summary(self) -> str:
        if not self.points:
            return "No points examined"
        msg = (
            f"{quantify(self.near_critical, 'near-critical point')} out of"
            f" {self.points}, max norm {self.max_norm:.4g}"
        )
        if self.escaping:
            msg += (
                f"; {quantify(self.escaping, 'point')} beyond the quadratic tail"
                " radius (slow decay of ∇F: q is close to resonance)"
            )
        return msg

    def to_dict(self) -> dict[str, Any]:
        return {
            "points": self.points,
            "near_critical": self.near_critical,
            "max_norm": self.max_norm,
            "cauchy_gap": self.cauchy_gap,
            "bounded": self.bounded,
            "flagged": self.flagged,
        }


def palais_smale_monitor(
    hm: ModifiedHamiltonian,
    trace: Sequence[FlowRecord],
    plog: PrefixedLogger = log,
) -> PalaisSmaleReport:
    """
    Examines the sup points recorded along the flow: the near-critical ones
    (``‖∇F‖ ≤ PS_RATIO·max(1, ‖z‖)``) must stay bounded and
    ``z⁺ − z⁻`` must settle
    """
    report = PalaisSmaleReport()
    if not trace:
        return report
    norms = np.array([r.norm for r in trace])
    gnorms = np.array([r.grad_norm for r in trace])
    near = gnorms <= PS_RATIO * np.maximum(1.0, norms)
    report.points = len(trace)
    report.near_critical = int(np.sum(near))
    report.tail_norm = float(np.sqrt(2 * np.pi) * hm.profile.s_quad)
    if report.near_critical:
        report.max_norm = float(np.max(norms[near]))
        report.escaping = int(np.sum(norms[near] > report.tail_norm))
        idx = np.flatnonzero(near)
        if len(idx) >= 2:
            before = trace[idx[-2]].sup_point
            after = trace[idx[-1]].sup_point
            if before.shape == after.shape:
                K = after.shape[-2] // 2
                sign = np.sign(np.arange(-K, K + 1, dtype=float))[:, None]
                gap = _h_half_norms(hm.frame, sign * (after - before))
                report.cauchy_gap = float(gap)
    if report.flagged:
        plog.warning("Palais–Smale monitor: %s", report.get_summary())
    else:
        plog.debug("Palais–Smale monitor: %s", report.get_summary())
    return report


@dataclass(frozen=True, eq=False)
class SearchResult:
    linking: LinkingConfig
    state: MinimaxState
    c_estimate: float
    candidate: CriticalCandidate
    stop_reason: str
    plateaued: bool
    linking_distance: float
    q_report: QSpectrumReport
    ps_report: PalaisSmaleReport = field(default_factory=PalaisSmaleReport)

    def to_dict(self) -> dict[str, Any]:
        return {
            "linking": self.linking.to_dict(),
            "c_estimate": self.c_estimate,
            "candidate": self.candidate.to_dict(),
            "stop_reason": self.stop_reason,
            "plateaued": self.plateaued,
            "flow_time": self.state.time,
            "flow_steps": len(self.state.history) - 1,
            "gradient_evaluations": self.state.evaluations,
            "linking_distance": self.linking_distance,
            "q_spectrum": self.q_report.to_dict(),
            "palais_smale": self.ps_report.to_dict(),
        }

    def trace_rows(self) -> list[list[float | int]]:
        """``(t, sup F, front size)`` per recorded flow time"""
        return [r.as_row() for r in self.state.history]


def minimax_search(
    family: HamiltonianFamily,
    m: ArrayLike,
    settings: SearchSettings = SearchSettings(),
    plog: PrefixedLogger | None = None,
) -> SearchResult:
    """
    Flows the sampled ``Σ`` until its sup plateaus or the budget runs out,
    then captures and polishes the critical loop next to the sup point of
    the flowed front.  A sup falling below ``β`` means ``Σ`` and ``Γ`` did not
    link and is an error.
    """
    if plog is None:
        plog = log.sublogger(f"epsilon={family.epsilon:g}")
    hm = family.at(m)
    q_report = spectral_q_check(settings.K, family.q)
    linking = choose_parameters(hm, settings)
    state = MinimaxState.start(family, hm, linking.sigma_sample, settings)
    plog.info(
        "Minimax search: %s, τ=%.6g, α=%.6g, β=%.6g",
        quantify(len(state.front), "front point"),
        linking.tau,
        linking.alpha,
        linking.beta_floor,
    )
    stop_reason = "budget"
    plateaued = False
    window = settings.plateau_window
    max_move = MAX_MOVE_FRACTION * linking.tau
    while state.evaluations < settings.budget:
        steepest = max(float(np.max(state.grad_norms())), 1e-300)
        dt = min(DT_GROWTH * state.dt, max_move / steepest)
        state = flow_step(state, dt)
        if state.sup_value < linking.beta_floor:
            raise LinkingError(
                f"sup F fell to {state.sup_value:.8g} below the linking floor"
                f" β = {linking.beta_floor:.8g} at t={state.time:g}: Σ does not"
                " link Γ"
            )
        sups = [r.sup_value for r in state.history[-(window + 1) :]]
        if len(state.history) > window and abs(sups[0] - sups[-1]) <= (
            settings.plateau_rtol * max(abs(sups[-1]), 1e-300)
        ):
            stop_reason = "plateau"
            plateaued = True
            break
    if not plateaued:
        plog.warning(
            "Gradient budget of %d exhausted before the sup plateaued", settings.budget
        )
    dist = linking_distance(state.hm.frame, state.front, linking.alpha)
    if dist > 10 * np.sqrt(linking.alpha):
        plog.warning(
            "Linking proxy lost: front is %.3g from Γ (bound %.3g)",
            dist,
            10 * np.sqrt(linking.alpha),
        )
    c_estimate = state.sup_value
    plog.info(
        "Flow stopped (%s) at t=%.4g: sup F = %.8g", stop_reason, state.time, c_estimate
    )
    hm = state.hm
    best = np.array(state.front[state.argmax])
    try:
        candidate = polish_critical(hm, capture(hm, best, settings, plog), settings)
    except (CaptureError, NewtonDivergenceError) as e:
        if plateaued:
            raise
        plog.warning("Sup point did not polish after the budget ran out: %s", e)
        candidate = _candidate(hm, best, settings.oversample)
    else:
        if candidate.value < linking.beta_floor - settings.tol_value:
            raise UnconvergedError(
                f"critical value {candidate.value:.8g} lies below the linking"
                f" floor β = {linking.beta_floor:.8g}"
            )
        plog.info(
            "Critical loop at m=%s: F = %.10g, ‖∇F‖ = %.2e",
            format_point(candidate.m),
            candidate.value,
            candidate.grad_norm,
        )
    ps_report = palais_smale_monitor(hm, state.history, plog)
    return SearchResult(
        linking=linking,
        state=state,
        c_estimate=c_estimate,
        candidate=candidate,
        stop_reason=stop_reason,
        plateaued=plateaued,
        linking_distance=dist,
        q_report=q_report,
        ps_report=ps_report,
    )
