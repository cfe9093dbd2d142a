from __future__ import annotations

from dataclasses import replace
import logging

from conftest import FAST_SEARCH
import numpy as np
import pytest
from scipy.integrate import trapezoid

from orbitlab import minimax
from orbitlab.action import (
    CutoffProfile,
    HamiltonianFamily,
    LevelParameter,
    ModifiedHamiltonian,
    ProfileParameters,
    batch_action,
    batch_action_and_gradient,
    gradient_jacobian,
    modified_hamiltonian,
)
from orbitlab.errors import (
    CaptureError,
    InadmissibleQError,
    LinkingError,
    NewtonDivergenceError,
    StepUnderflowError,
)
from orbitlab.loops import FourierLoop, e_N_plus
from orbitlab.minimax import (
    CriticalCandidate,
    FlowRecord,
    MinimaxState,
    PalaisSmaleReport,
    base_polish,
    capture,
    choose_parameters,
    flow_step,
    gamma_sample,
    hessian_spectrum,
    level_peak,
    linking_distance,
    mean_force,
    minimax_search,
    palais_smale_monitor,
    polish_critical,
    sigma_sample,
    spectral_q_check,
    tau_for,
)
from orbitlab.systems import PointQuadratic

K = FAST_SEARCH.K


@pytest.fixture
def family(oscillator: PointQuadratic) -> HamiltonianFamily:
    return ProfileParameters().family(oscillator, 0.1)


@pytest.fixture
def oscillator_h(family: HamiltonianFamily) -> ModifiedHamiltonian:
    return family.at([])


def candidate_for(hm: ModifiedHamiltonian, coeffs: np.ndarray) -> CriticalCandidate:
    z = FourierLoop(frame=hm.frame, coeffs=coeffs)
    value, grad = batch_action_and_gradient(hm, np.asarray(z.coeffs))
    return CriticalCandidate(
        m=hm.m,
        z=z,
        value=float(value),
        grad_norm=z.with_coeffs(grad).h_half_norm(),
    )


def test_tau_branch(oscillator_h: ModifiedHamiltonian) -> None:
    tau, branch = tau_for(oscillator_h)
    assert branch == "2b"
    assert tau == pytest.approx(1.05 * np.sqrt(2 * oscillator_h.profile.b))


def test_sigma_sample(oscillator_h: ModifiedHamiltonian) -> None:
    points, rim = sigma_sample(oscillator_h.frame, K, 0.5, (3, 3, 4))
    # the four grid corners fall outside the disc
    assert points.shape == (20, 2 * K + 1, 2)
    assert rim.sum() == 18


def test_gamma_sample_lies_on_sphere(oscillator_h: ModifiedHamiltonian) -> None:
    frame = oscillator_h.frame
    gamma = gamma_sample(frame, K, 0.01, 6, seed=1)
    norms = [FourierLoop(frame=frame, coeffs=c).h_half_norm() for c in gamma]
    assert np.allclose(norms, 0.1, rtol=1e-12)
    assert not gamma[:, : K + 1].any()
    assert linking_distance(frame, gamma, 0.01) < 1e-12


def test_choose_parameters(oscillator_h: ModifiedHamiltonian) -> None:
    linking = choose_parameters(oscillator_h, FAST_SEARCH)
    assert linking.boundary_sup <= 1e-9
    assert linking.beta_floor >= linking.alpha / 4
    assert linking.alpha <= linking.tau**2 / 4
    assert len(linking.gamma_sample) == FAST_SEARCH.gamma_samples
    assert linking.to_dict()["tau_branch"] == "2b"


def test_spectral_q_check() -> None:
    assert spectral_q_check(8, 3.0).margin == pytest.approx(np.pi)
    assert spectral_q_check(8, 2.5).margin == pytest.approx(np.pi / 2)
    assert spectral_q_check(8, 2.5).to_dict()["resonance_margin"] == pytest.approx(
        np.pi / 2
    )
    with pytest.raises(InadmissibleQError):
        spectral_q_check(8, 2.0)




def tail_records(hm: ModifiedHamiltonian, count: int = 8) -> list[FlowRecord]:
    """Sup records of single-mode loops ``s·e⁺_N`` in the quadratic tail"""
    e = np.array(e_N_plus(hm.frame, K).coeffs)
    radii = np.geomspace(hm.profile.s_quad, 32 * hm.profile.s_quad, count)
    records = []
    for i, s in enumerate(radii):
        front = s * e[None]
        values, grads = batch_action_and_gradient(hm, front)
        records.append(FlowRecord.of_front(hm.frame, float(i), front, values, grads))
    return records


def test_palais_smale_flags_near_resonant_q(
    oscillator: PointQuadratic, caplog: pytest.LogCaptureFixture
) -> None:
    hm = modified_hamiltonian(oscillator, [], 0.1, q=2.01)
    report = palais_smale_monitor(hm, tail_records(hm))
    # ∇F = (1 − q/2)·z on single-mode loops in the tail
    assert report.near_critical == 8
    assert report.escaping >= 7
    assert report.flagged
    assert report.max_norm > report.tail_norm
    assert report.cauchy_gap > 0
    assert any(
        r.levelno == logging.WARNING and "Palais–Smale" in r.getMessage()
        for r in caplog.records
    )


def test_palais_smale_bounded_for_default_q(oscillator_h: ModifiedHamiltonian) -> None:
    report = palais_smale_monitor(oscillator_h, tail_records(oscillator_h))
    assert report
    assert report.near_critical == 0
    assert report.bounded
    assert not report.to_dict()["flagged"]


def test_palais_smale_empty(oscillator_h: ModifiedHamiltonian) -> None:
    report = palais_smale_monitor(oscillator_h, [])
    assert not report
    assert report == PalaisSmaleReport()
    assert report.get_summary() == "No points examined"


def test_flow_of_small_loop_decays_exponentially(
    family: HamiltonianFamily, oscillator_h: ModifiedHamiltonian
) -> None:
    s = 0.01
    front = s * np.array(e_N_plus(oscillator_h.frame, K).coeffs)[None]
    state = MinimaxState.start(family, oscillator_h, front, FAST_SEARCH)
    dt = 0.01
    for _ in range(100):
        state = flow_step(state, dt)
    # h_m vanishes near the zero section, so ∇F = z there
    factor = (1 - dt + dt**2 / 2) ** 100
    assert np.allclose(state.front, factor * front, rtol=1e-12, atol=0)
    assert factor == pytest.approx(np.exp(-1), rel=1e-4)
    assert state.time == pytest.approx(1.0)
    assert state.evaluations == 201
    assert len(state.history) == 101
    sups = [r.sup_value for r in state.history]
    assert all(b < a for a, b in zip(sups, sups[1:]))
    last = state.history[-1]
    assert last.as_row() == [state.time, state.sup_value, 1]
    assert last.grad_norm == pytest.approx(last.norm, rel=1e-12)
    assert np.array_equal(last.sup_point, state.front[0])
    # a shrinking small loop is never near-critical in the relative sense
    assert palais_smale_monitor(oscillator_h, state.history).near_critical == 0


def test_flow_dissipates_squared_gradient(
    family: HamiltonianFamily, oscillator_h: ModifiedHamiltonian
) -> None:
    prof = oscillator_h.profile
    # a loop in the join of h_m into its quadratic tail, with a k = −1 part
    s = 0.5 * (prof.r + prof.s_quad)
    coeffs = s * np.array(e_N_plus(oscillator_h.frame, K).coeffs)
    coeffs[K - 1] = 0.05 * coeffs[K + 1]
    state = MinimaxState.start(family, oscillator_h, coeffs[None], FAST_SEARCH)
    dt = 2e-4
    values = [state.sup_value]
    rates = [float(state.grad_norms()[0]) ** 2]
    for _ in range(500):
        state = flow_step(state, dt)
        values.append(state.sup_value)
        rates.append(float(state.grad_norms()[0]) ** 2)
    assert state.dt == dt
    dissipated = trapezoid(rates, dx=dt)
    assert dissipated > 0
    assert values[0] - values[-1] == pytest.approx(dissipated, rel=1e-4)


def test_flow_step_underflow(
    family: HamiltonianFamily, oscillator_h: ModifiedHamiltonian
) -> None:
    front = 0.01 * np.array(e_N_plus(oscillator_h.frame, K).coeffs)[None]
    state = MinimaxState.start(family, oscillator_h, front, FAST_SEARCH)
    with pytest.raises(ValueError):
        flow_step(state, 0.0)
    # a step of 3 overshoots and grows the loop; 1.5 would be accepted
    with pytest.raises(StepUnderflowError, match="underflow"):
        flow_step(replace(state, dt_min=2.0), 3.0)


def test_level_peak(oscillator_h: ModifiedHamiltonian) -> None:
    direction = np.array(e_N_plus(oscillator_h.frame, K).coeffs)
    v, coeffs = level_peak(oscillator_h, 0.05 * direction)
    # the peak sits just inside the shell, on the circle through the shape
    assert 0 < v < 0.25
    assert np.allclose(np.delete(coeffs, K + 1, axis=0), 0.0, atol=1e-14)
    start = candidate_for(oscillator_h, coeffs)
    assert start.value > 0
    assert start.grad_norm <= 1e-5


def test_newton_polish(
    family: HamiltonianFamily, oscillator_h: ModifiedHamiltonian
) -> None:
    direction = np.array(e_N_plus(oscillator_h.frame, K).coeffs)
    _, peak = level_peak(oscillator_h, direction)
    f_peak = float(batch_action(oscillator_h, peak))
    assert f_peak > 0
    # the shell is about ε³ thick, and so is the Newton basin
    epsilon = oscillator_h.level.epsilon
    rng = np.random.default_rng(5)
    noisy = peak + 1e-3 * epsilon**3 * rng.normal(size=peak.shape)
    start = candidate_for(oscillator_h, noisy)
    assert start.grad_norm > FAST_SEARCH.tol_grad
    polished = polish_critical(oscillator_h, start, FAST_SEARCH)
    assert polished.converged
    assert polished.polish_residual <= 1e-9
    assert polished.newton_iterations <= 6
    # time shifts of a critical loop are critical
    assert polished.nullity == 1
    assert polished.value == pytest.approx(f_peak, rel=1e-6)
    assert base_polish(family, polished) is polished
    assert mean_force(oscillator_h, np.asarray(polished.z.coeffs)).shape == (0,)


def test_time_shift_spans_the_kernel(oscillator_h: ModifiedHamiltonian) -> None:
    direction = np.array(e_N_plus(oscillator_h.frame, K).coeffs)
    shape = oscillator_h.profile.gamma * direction
    polished = polish_critical(
        oscillator_h, capture(oscillator_h, shape, FAST_SEARCH), FAST_SEARCH
    )
    jac = gradient_jacobian(oscillator_h, np.asarray(polished.z.coeffs))
    spectrum = hessian_spectrum(oscillator_h.frame, K, jac)
    assert np.sum(np.abs(spectrum) < 1e-8) == 1
    assert np.sort(np.abs(spectrum))[1] > 1e-6
    shift = polished.z.derivative().to_vector()
    assert np.linalg.norm(jac @ shift) <= 1e-6 * np.linalg.norm(shift)


def test_polish_reports_degenerate_critical_set(oscillator: PointQuadratic) -> None:
    level = LevelParameter.build(oscillator, [], 0.1)
    gamma = modified_hamiltonian(oscillator, [], 0.1).profile.gamma
    hm = ModifiedHamiltonian(
        level=level, profile=CutoffProfile.from_gamma(0.1, 2.0, gamma)
    )
    # with q = 2 every k = 1 loop in the quadratic tail is critical
    coeffs = 2 * hm.profile.s_quad * np.array(e_N_plus(hm.frame, K).coeffs)
    start = candidate_for(hm, coeffs)
    assert start.grad_norm <= 1e-12
    with pytest.raises(NewtonDivergenceError, match="nullity 2"):
        polish_critical(hm, start, FAST_SEARCH)


def test_capture_threshold(oscillator_h: ModifiedHamiltonian) -> None:
    direction = np.array(e_N_plus(oscillator_h.frame, K).coeffs)
    start = candidate_for(oscillator_h, 0.05 * direction)
    with pytest.raises(CaptureError):
        polish_critical(oscillator_h, start, replace(FAST_SEARCH, capture=1e-6))


def test_capture_is_stable_in_truncation_order(
    oscillator_h: ModifiedHamiltonian,
) -> None:
    polished = {}
    for order in (8, 64):
        settings = replace(FAST_SEARCH, K=order)
        shape = np.array(e_N_plus(oscillator_h.frame, order).coeffs)
        start = capture(oscillator_h, oscillator_h.profile.gamma * shape, settings)
        polished[order] = polish_critical(oscillator_h, start, settings)
    low, high = polished[8], polished[64]
    assert high.converged
    assert high.nullity == 1
    assert high.value == pytest.approx(low.value, rel=1e-10)
    # the critical loop of an isotropic oscillator is a single mode
    assert np.allclose(np.delete(high.z.coeffs, 65, axis=0), 0.0, atol=1e-10)
    assert np.allclose(
        np.linalg.norm(high.z.coefficient(1)), np.linalg.norm(low.z.coefficient(1))
    )


def test_minimax_search_oscillator(family: HamiltonianFamily) -> None:
    result = minimax_search(family, [], FAST_SEARCH)
    alpha = result.linking.alpha
    assert result.linking_distance <= 10 * np.sqrt(alpha)
    assert result.candidate.converged
    assert result.candidate.grad_norm <= FAST_SEARCH.tol_grad
    assert result.candidate.value >= result.linking.beta_floor
    assert result.c_estimate >= result.linking.beta_floor
    assert result.stop_reason in ("plateau", "budget")
    assert not result.ps_report.flagged
    rows = result.trace_rows()
    assert len(rows) == len(result.state.history)
    assert rows[0][0] == 0.0
    assert rows[-1][1] == result.c_estimate
    data = result.to_dict()
    assert data["q_spectrum"]["resonance_margin"] == pytest.approx(np.pi)
    assert data["candidate"]["nullity"] == 1


def test_sup_below_floor_is_a_linking_failure(
    family: HamiltonianFamily, monkeypatch: pytest.MonkeyPatch
) -> None:
    choose = minimax.choose_parameters

    def raised_floor(
        hm: ModifiedHamiltonian, settings: minimax.SearchSettings
    ) -> minimax.LinkingConfig:
        return replace(choose(hm, settings), beta_floor=1.0)

    monkeypatch.setattr(minimax, "choose_parameters", raised_floor)
    with pytest.raises(LinkingError, match="linking floor"):
        minimax_search(family, [], FAST_SEARCH)


def test_budget_exhaustion(
    family: HamiltonianFamily, caplog: pytest.LogCaptureFixture
) -> None:
    result = minimax_search(family, [], replace(FAST_SEARCH, budget=1))
    assert result.stop_reason == "budget"
    assert not result.plateaued
    assert len(result.state.history) == 1
    assert any(
        r.levelno == logging.WARNING and "budget" in r.getMessage()
        for r in caplog.records
    )
