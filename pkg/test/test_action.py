from __future__ import annotations

import numpy as np
import pytest

from orbitlab.action import (
    CutoffProfile,
    HamiltonianFamily,
    LevelParameter,
    ModifiedHamiltonian,
    ProfileParameters,
    action_and_gradient,
    batch_action,
    batch_action_and_gradient,
    build_profile,
    check_q,
    eval_action,
    eval_h,
    grad_action_base,
    grad_action_fibre,
    grad_h,
    gradient_jacobian,
    h_half_weights,
    modified_hamiltonian,
    outer_radius,
    verify_bounds,
)
from orbitlab.errors import InadmissibleQError, ProfileWindowError
from orbitlab.geometry import Gauge
from orbitlab.loops import FourierLoop, e_N_plus, free_mask
from orbitlab.systems import MagneticTorus, PointQuadratic

K = 4


@pytest.fixture
def oscillator_h(oscillator: PointQuadratic) -> ModifiedHamiltonian:
    return modified_hamiltonian(oscillator, [], 0.1)


@pytest.fixture
def torus_h(varying_torus: MagneticTorus) -> ModifiedHamiltonian:
    return modified_hamiltonian(varying_torus, [0.5, 0.0], 0.2)


def fd_gradient(hm: ModifiedHamiltonian, coeffs: np.ndarray) -> np.ndarray:
    """Central differences of ``F`` with respect to each coefficient"""
    step = 1e-6
    shifts = step * np.eye(coeffs.size).reshape(-1, *coeffs.shape)
    values = batch_action(hm, np.concatenate([coeffs + shifts, coeffs - shifts]))
    half = len(shifts)
    out: np.ndarray = ((values[:half] - values[half:]) / (2 * step)).reshape(
        coeffs.shape
    )
    return out


def test_check_q() -> None:
    with pytest.raises(InadmissibleQError, match="even"):
        check_q(2.0, 1, 0)
    with pytest.raises(InadmissibleQError, match="even"):
        check_q(4.0, 2, 1)
    with pytest.raises(InadmissibleQError, match="exceed"):
        check_q(1.5, 1, 0)
    with pytest.raises(InadmissibleQError, match="exceed"):
        check_q(2.5, 3, 2)
    check_q(2.01, 1, 0)
    check_q(3.0, 2, 1)


def test_profile_window() -> None:
    prof = CutoffProfile.from_gamma(0.1, 3.0, 0.2)
    assert prof.violations() == []
    assert prof.r == pytest.approx(0.3)
    assert prof.s_quad == pytest.approx(0.6)
    assert 0 < prof.theta <= 1
    bad_b = CutoffProfile.from_gamma(0.1, 3.0, 0.2, b_factor=1.2)
    assert any(v.startswith("b =") for v in bad_b.violations())
    bad_r = CutoffProfile.from_gamma(0.1, 3.0, 0.2, r_factor=2.5)
    assert any(v.startswith("r =") for v in bad_r.violations())


def test_profile_is_smooth() -> None:
    prof = CutoffProfile.from_gamma(0.1, 3.0, 0.2)
    join = prof.r + prof.theta * (prof.s_quad - prof.r)
    h = 1e-9
    tail = 0.5 * prof.q * np.pi
    assert prof.g(prof.r) == pytest.approx(prof.b, rel=1e-14)
    assert prof.g(0.0) == prof.b
    assert prof.g(join - h) == pytest.approx(tail * join**2, rel=1e-7)
    assert prof.g_prime(join - h) == pytest.approx(2 * tail * join, rel=1e-7)
    assert prof.g(2 * prof.s_quad) == pytest.approx(tail * (2 * prof.s_quad) ** 2)
    assert prof.g_prime_over_s(0.0) == 0.0
    s = np.linspace(0, 2 * prof.s_quad, 401)
    assert np.all(np.diff(prof.g(s)) >= -1e-15)
    assert prof.f(-prof.epsilon) == 0.0
    assert prof.f(prof.epsilon) == prof.b
    assert prof.f_prime(0.0) > 0


def test_level_parameter(oscillator: PointQuadratic) -> None:
    level = LevelParameter.build(oscillator, [], 0.1)
    assert level(np.zeros(2)) == pytest.approx(-4.0)
    # ρ vanishes on the circle H = ε²
    assert level(np.array([0.1, 0.0])) == pytest.approx(0.0, abs=1e-12)
    assert level.gamma0 == pytest.approx(0.1 * np.sqrt(1.25))
    assert outer_radius(level) == pytest.approx(level.gamma0, rel=1e-10)


def test_level_differential(torus_h: ModifiedHamiltonian) -> None:
    level = torus_h.level
    rng = np.random.default_rng(0)
    pts = rng.normal(scale=0.5 * level.extent, size=(6, 4))
    _, d = level.evaluate(pts, differential=True)
    assert d is not None
    h = 1e-6
    for i, e in enumerate(np.eye(4)):
        fd = (level(pts + h * e) - level(pts - h * e)) / (2 * h)
        assert np.allclose(d[:, i], fd, rtol=1e-5, atol=1e-5)


def test_modified_hamiltonian_shape(oscillator_h: ModifiedHamiltonian) -> None:
    prof = oscillator_h.profile
    assert oscillator_h.value(np.array([0.05, 0.0])) == 0.0
    # outside the shell but inside r the profile sits at its plateau
    assert oscillator_h.value(np.array([0.0, 0.15])) == pytest.approx(prof.b)
    far = np.array([3 * prof.s_quad, 0.0])
    assert oscillator_h.value(far) == pytest.approx(
        0.5 * prof.q * np.pi * (3 * prof.s_quad) ** 2, rel=1e-12
    )


def test_modified_hamiltonian_gradient(torus_h: ModifiedHamiltonian) -> None:
    rng = np.random.default_rng(4)
    scale = torus_h.profile.s_quad
    pts = rng.normal(scale=0.5 * scale, size=(8, 4))
    d = torus_h.differential(pts)
    h = 1e-7
    for i, e in enumerate(np.eye(4)):
        fd = (torus_h.value(pts + h * e) - torus_h.value(pts - h * e)) / (2 * h)
        assert np.allclose(d[:, i], fd, rtol=1e-5, atol=1e-5 * torus_h.profile.b)


def test_profile_window_error(oscillator: PointQuadratic) -> None:
    with pytest.raises(ProfileWindowError):
        modified_hamiltonian(oscillator, [], 0.1, b_factor=1.2)
    with pytest.raises(InadmissibleQError):
        modified_hamiltonian(oscillator, [], 0.1, q=2.0)


def test_small_loop_action(oscillator_h: ModifiedHamiltonian) -> None:
    s = 0.01
    z = s * e_N_plus(oscillator_h.frame, K)
    assert eval_action(oscillator_h, z) == pytest.approx(np.pi * s**2, rel=1e-13)
    _, grad = action_and_gradient(oscillator_h, z)
    # F is the pure area functional there
    assert np.allclose(grad.coeffs, z.coeffs, atol=1e-16)


def test_functional_wrappers(
    oscillator: PointQuadratic, torus_h: ModifiedHamiltonian
) -> None:
    assert build_profile(oscillator, [], 0.1) == CutoffProfile.from_gamma(
        0.1, 3.0, modified_hamiltonian(oscillator, [], 0.1).profile.gamma
    )
    pts = np.random.default_rng(7).normal(scale=torus_h.profile.r, size=(6, 4))
    assert np.array_equal(eval_h(torus_h, pts), torus_h.value(pts))
    assert np.array_equal(grad_h(torus_h, pts), torus_h.gradient(pts))
    z = torus_h.profile.gamma * e_N_plus(torus_h.frame, K)
    assert np.array_equal(
        grad_action_fibre(torus_h, z).coeffs, action_and_gradient(torus_h, z)[1].coeffs
    )


@pytest.mark.parametrize("which", ["oscillator_h", "torus_h"])
def test_gradient_matches_finite_differences(
    which: str, request: pytest.FixtureRequest
) -> None:
    hm: ModifiedHamiltonian = request.getfixturevalue(which)
    frame = hm.frame
    rng = np.random.default_rng(11)
    base = np.array(e_N_plus(frame, K).coeffs) * hm.profile.gamma
    coeffs = base + 0.05 * hm.profile.gamma * rng.normal(size=base.shape)
    coeffs = np.array(FourierLoop(frame=frame, coeffs=coeffs).coeffs)
    _, grads = batch_action_and_gradient(hm, coeffs)
    weights = 2 * np.pi * np.abs(np.arange(-K, K + 1, dtype=float))
    weights[K] = 1.0
    predicted = weights[:, None] * (grads @ frame.g_frame)
    fd = fd_gradient(hm, coeffs)
    mask = free_mask(frame, K)
    scale = np.max(np.abs(fd[mask]))
    assert np.max(np.abs(predicted[mask] - fd[mask])) <= 1e-5 * scale


@pytest.mark.parametrize("which", ["oscillator_h", "torus_h"])
def test_gradient_on_random_loops(which: str, request: pytest.FixtureRequest) -> None:
    hm: ModifiedHamiltonian = request.getfixturevalue(which)
    frame = hm.frame
    prof = hm.profile
    rng = np.random.default_rng(23)
    # radii from the flat core through the shell and the join into the tail
    radii = np.geomspace(0.3 * prof.gamma, 2 * prof.s_quad, 100)
    decay = 0.5 ** np.abs(np.arange(-K, K + 1))[:, None]
    base = np.array(e_N_plus(frame, K).coeffs)
    mask = free_mask(frame, K)
    weights = h_half_weights(K)[:, None]
    for s in radii:
        noise = 0.1 * s * decay * rng.normal(size=base.shape)
        coeffs = np.array(FourierLoop(frame=frame, coeffs=s * base + noise).coeffs)
        _, grads = batch_action_and_gradient(hm, coeffs)
        predicted = weights * (grads @ frame.g_frame)
        fd = fd_gradient(hm, coeffs)
        scale = np.max(np.abs(fd[mask]))
        assert np.max(np.abs(predicted[mask] - fd[mask])) <= 1e-5 * scale + 1e-10


@pytest.mark.parametrize("which", ["oscillator_h", "torus_h"])
def test_gradient_jacobian(which: str, request: pytest.FixtureRequest) -> None:
    hm: ModifiedHamiltonian = request.getfixturevalue(which)
    frame = hm.frame
    rng = np.random.default_rng(3)
    # a loop crossing the shell, which sits at γ/√1.25
    radius = hm.profile.gamma / np.sqrt(1.25)
    base = np.array(e_N_plus(frame, K).coeffs) * radius
    coeffs = base + 0.02 * radius * rng.normal(size=base.shape)
    coeffs = np.array(FourierLoop(frame=frame, coeffs=coeffs).coeffs)
    mask = free_mask(frame, K)
    jac = gradient_jacobian(hm, coeffs)
    assert jac.shape == (mask.sum(), mask.sum())
    step = 1e-7
    x = coeffs[mask]
    shifts = step * np.eye(len(x))
    tables = np.zeros((2 * len(x), *mask.shape))
    tables[:, mask] = np.concatenate([x + shifts, x - shifts])
    _, grads = batch_action_and_gradient(hm, tables)
    flat = grads[:, mask]
    fd = ((flat[: len(x)] - flat[len(x) :]) / (2 * step)).T
    assert np.max(np.abs(jac - fd)) <= 1e-4 * np.max(np.abs(fd))


def test_second_differential(torus_h: ModifiedHamiltonian) -> None:
    rng = np.random.default_rng(9)
    prof = torus_h.profile
    # shell points, and points on either side of the tail join
    shell = 0.01 * prof.gamma * rng.normal(size=(6, 4))
    shell += prof.gamma / np.sqrt(1.25) * e_N_plus(torus_h.frame, 1).coefficient(1)
    outer = rng.normal(scale=0.5 * prof.s_quad, size=(6, 4))
    pts = np.concatenate([shell, outer])
    d2 = torus_h.second_differential(pts)
    assert d2.shape == (12, 4, 4)
    assert np.allclose(d2, np.swapaxes(d2, -1, -2))
    h = 1e-7
    for i, e in enumerate(np.eye(4)):
        fd = (torus_h.differential(pts + h * e) - torus_h.differential(pts - h * e)) / (
            2 * h
        )
        scale = np.max(np.abs(fd), axis=-1, keepdims=True)
        assert np.all(np.abs(d2[:, i] - fd) <= 1e-4 * scale + 1e-7)


def test_batch_matches_single(torus_h: ModifiedHamiltonian) -> None:
    rng = np.random.default_rng(2)
    stack = 0.03 * rng.normal(size=(3, 2 * K + 1, 4))
    stack[:, K, :2] = 0.0
    values = batch_action(torus_h, stack)
    for c, v in zip(stack, values):
        z = FourierLoop(frame=torus_h.frame, coeffs=c)
        assert eval_action(torus_h, z) == pytest.approx(v, rel=1e-12)


def test_loop_over_other_base(
    torus_h: ModifiedHamiltonian, varying_torus: MagneticTorus
) -> None:
    other = modified_hamiltonian(varying_torus, [1.5, 0.0], 0.2)
    z = e_N_plus(other.frame, K)
    with pytest.raises(ValueError):
        eval_action(torus_h, z)


def test_base_gradient(varying_torus: MagneticTorus) -> None:
    family = ProfileParameters().family(varying_torus, 0.2)
    hm = family.at([0.5, 0.0])
    z = e_N_plus(hm.frame, K) * hm.profile.gamma
    grad = grad_action_base(family, z)
    assert np.max(np.abs(grad)) > 1e-6
    step = 1e-3
    oracle = np.zeros(2)
    for a in range(2):
        e = np.zeros(2)
        e[a] = step
        vals = []
        for shift in (2, 1, -1, -2):
            other = family.at(z.m + shift * e)
            vals.append(eval_action(other, z.rebase(other.frame)))
        oracle[a] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * step)
    assert np.allclose(grad, oracle, atol=1e-5)


def test_constant_field_base_gradient_vanishes(larmor_torus: MagneticTorus) -> None:
    family = ProfileParameters().family(larmor_torus, 0.25)
    hm = family.at([0.0, 0.0])
    z = e_N_plus(hm.frame, K) * hm.profile.gamma
    assert np.max(np.abs(grad_action_base(family, z))) < 1e-8


def test_family_cache(varying_torus: MagneticTorus) -> None:
    family = HamiltonianFamily(system=varying_torus, epsilon=0.2, gauge=Gauge.TAYLOR)
    assert family.at([0.5, 0.0]) is family.at(np.array([0.5, 0.0]))
    assert family.at([0.5, 0.0]).level.chart.gauge is Gauge.TAYLOR


@pytest.mark.parametrize("which", ["oscillator_h", "torus_h"])
def test_growth_bounds(which: str, request: pytest.FixtureRequest) -> None:
    hm: ModifiedHamiltonian = request.getfixturevalue(which)
    report = verify_bounds(hm)
    assert bool(report) is True
    assert report.u2_ok is True
    report.check()
    assert report.samples == 1001
    assert np.isfinite(report.measured_c1)
    assert report.to_dict()["u1_ok"]
