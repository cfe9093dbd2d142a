"""
From critical loops to verified periodic orbits of ``X_H``

A polished critical loop of ``F_m`` is a 1-periodic orbit of ``X_{h_m}`` in
the Darboux chart.  Where ``h_m = f(ρ) − b`` it is a reparametrized orbit of
``X_H`` on the level ``H = ε² + ρε²/4``; the physical period follows from the
ratio ``∇(H∘Φ_m) = λ∇h_m`` along the loop.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from functools import partial
import math
from typing import Any

import anyio
import numpy as np
from numpy.typing import ArrayLike
from scipy.integrate import solve_ivp

from .action import ModifiedHamiltonian, ProfileParameters
from .aioutil import aiter_items, pool_amap
from .consts import (
    CLOSURE_TOL,
    DEFAULT_ATOL,
    DEFAULT_INTEGRATOR,
    DEFAULT_RTOL,
    DEFAULT_WORKERS,
    RHO_BAND_SLACK,
)
from .errors import (
    ChartEscapeError,
    ConfigError,
    OrbitlabError,
    RhoBandError,
    UnconvergedError,
    VerificationError,
)
from .logging import PrefixedLogger, log
from .loops import FourierLoop, synthesize
from .minimax import (
    CriticalCandidate,
    SearchResult,
    SearchSettings,
    base_polish,
    minimax_search,
)
from .systems import BaseKind, ModelSystem
from .util import FloatArray, format_point, quantify

#: Default number of time samples of an orbit
DEFAULT_ORBIT_SAMPLES = 256


@dataclass(frozen=True)
class IntegratorSettings:
    method: str = DEFAULT_INTEGRATOR
    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL
    closure_tol: float = CLOSURE_TOL


@dataclass(frozen=True, eq=False)
class PeriodicOrbit:
    epsilon: float
    loop: FourierLoop
    #: Loop times ``t ∈ [0, 1)``
    times: FloatArray
    #: Phase-space points ``Φ_m(z(t))``
    samples: FloatArray
    energies: FloatArray
    rho: float
    #: Period of the corresponding orbit of ``X_H``
    period_phys: float
    #: Relative spread of the gradient ratio ``λ`` along the loop
    period_spread: float
    action: float
    ode_residual: float
    #: ``ζ`` in the fit ``|z_k| ≈ C·ζ^{|k|}`` (0 when only one mode is present)
    spectral_decay: float
    radius: float
    closure_residual: float = math.nan

    @property
    def m(self) -> FloatArray:
        return self.loop.m

    @property
    def energy(self) -> float:
        return float(np.mean(self.energies))

    @property
    def energy_deviation(self) -> float:
        return float(np.max(np.abs(self.energies - self.energy)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "epsilon": self.epsilon,
            "m": [float(v) for v in self.m],
            "rho": self.rho,
            "energy": self.energy,
            "energy_deviation": self.energy_deviation,
            "period_phys": self.period_phys,
            "period_spread": self.period_spread,
            "action": self.action,
            "radius": self.radius,
            "residuals": {
                "ode": self.ode_residual,
                "closure": self.closure_residual,
            },
            "spectral_decay_zeta": self.spectral_decay,
            "loop": self.loop.to_dict(),
        }

    def csv_rows(self) -> list[list[float]]:
        """Rows ``t, q…, p…, H`` with ``t`` in physical time"""
        return [
            [float(t * self.period_phys), *map(float, z), float(h)]
            for t, z, h in zip(self.times, self.samples, self.energies)
        ]

    def csv_header(self) -> list[str]:
        n = self.samples.shape[-1] // 2
        return [
            "t",
            *(f"q{i + 1}" for i in range(n)),
            *(f"p{i + 1}" for i in range(n)),
            "H",
        ]


def _spectral_decay(loop: FourierLoop) -> float:
    g = loop.frame.g_frame
    per_mode = np.sqrt(np.einsum("ki,ij,kj->k", loop.coeffs, g, loop.coeffs))
    K = loop.K
    mags = np.maximum(per_mode[K + 1 :], per_mode[K - 1 :: -1])
    ks = np.arange(1, K + 1)
    keep = mags > 1e-13 * max(float(np.max(mags, initial=0.0)), 1e-300)
    if np.sum(keep) < 2:
        return 0.0
    slope, _ = np.polyfit(ks[keep], np.log(mags[keep]), 1)
    return float(np.exp(slope))


def _spatial_radius(system: ModelSystem, samples: FloatArray) -> float:
    if system.base_kind is BaseKind.POINT:
        pts = samples
    else:
        pts = samples[:, : system.n]
    center = pts.mean(axis=0)
    return float(np.mean(np.linalg.norm(pts - center, axis=1)))


def loop_to_orbit(
    hm: ModifiedHamiltonian,
    candidate: CriticalCandidate,
    n_samples: int = DEFAULT_ORBIT_SAMPLES,
) -> PeriodicOrbit:
    """
    Maps a polished critical loop to phase space and measures its level,
    period and residuals
    """
    if not candidate.converged:
        raise ValueError("loop_to_orbit needs a polished critical loop")
    if not np.array_equal(candidate.m, hm.m):
        raise ValueError("candidate and h_m live over different base points")
    level = hm.level
    frame = hm.frame
    eps = level.epsilon
    z = candidate.z
    count = max(n_samples, 2 * (2 * z.K + 1))
    times = np.arange(count) / count
    zeta = synthesize(z, times)
    radius = np.sqrt(np.einsum("si,ij,sj->s", zeta, frame.g_frame, zeta))
    if np.max(radius) > level.extent - level.collar:
        raise ChartEscapeError(
            f"critical loop reaches {float(np.max(radius)):g} beyond the pure-chart"
            f" region {level.extent - level.collar:g} at m={format_point(hm.m)}"
            " (extended-hypersurface escape)"
        )
    samples = level.chart.map(frame.to_standard(zeta))
    energies = hm.system.hamiltonian(samples)
    rho = float(4 * (np.mean(energies) - eps**2) / eps**2)
    if abs(rho) > eps * (1 + RHO_BAND_SLACK):
        raise RhoBandError(
            f"orbit level ρ = {rho:.8g} lies outside the band [−{eps:g}, {eps:g}]"
        )
    velocity = synthesize(z.derivative(), times)
    field_ = hm.gradient(zeta) @ frame.j_frame.T
    diff = velocity - field_
    ode_residual = float(
        np.sqrt(np.max(np.einsum("si,ij,sj->s", diff, frame.g_frame, diff)))
    )
    dk = level.energy_differential(zeta)
    dh = hm.differential(zeta)
    ratios = np.sum(dk * dh, axis=-1) / np.sum(dh * dh, axis=-1)
    lam = float(np.mean(ratios))
    if not lam > 0:
        raise VerificationError(
            f"gradient ratio between H and h_m is {lam:g}; loop is not on a level"
            " of the cutoff"
        )
    orbit = PeriodicOrbit(
        epsilon=eps,
        loop=z,
        times=times,
        samples=samples,
        energies=energies,
        rho=rho,
        period_phys=1 / lam,
        period_spread=float(np.std(ratios) / lam),
        action=candidate.value,
        ode_residual=ode_residual,
        spectral_decay=_spectral_decay(z),
        radius=_spatial_radius(hm.system, samples),
    )
    log.debug(
        "Orbit at m=%s: H=%.10g (ρ=%.4g), T=%.10g, radius=%.8g",
        format_point(hm.m),
        orbit.energy,
        rho,
        orbit.period_phys,
        orbit.radius,
    )
    return orbit


@dataclass
class OrbitVerification:
    closure: float = math.nan
    #: Largest distance between the integrated and the sampled orbit
    max_distance: float = math.nan
    #: Largest drift of ``H`` along the integrated orbit
    energy_drift: float = math.nan
    rho: float = 0.0
    epsilon: float = 0.0
    action: float = 0.0
    closure_tol: float = CLOSURE_TOL
    energy_tol: float = 1e-6

    def problems(self) -> list[str]:
        out = []
        if not self.closure <= self.closure_tol:
            out.append(
                f"closure residual {self.closure:.3e} exceeds {self.closure_tol:g}"
            )
        if not self.energy_drift <= self.energy_tol * self.epsilon**2:
            out.append(f"energy drifts by {self.energy_drift:.3e} along the orbit")
        if abs(self.rho) > self.epsilon * (1 + RHO_BAND_SLACK):
            out.append(f"ρ = {self.rho:.6g} outside [−ε, ε]")
        if not self.action > 0:
            out.append(f"action {self.action:g} is not positive")
        return out

    def __bool__(self) -> bool:
        return not self.problems()

    def get_summary(self) -> str:
        msg = (
            f"closure {self.closure:.3e}, max distance {self.max_distance:.3e},"
            f" energy drift {self.energy_drift:.3e}"
        )
        if problems := self.problems():
            msg += f"; {quantify(len(problems), 'problem')}"
        return msg

    def check(self) -> None:
        if problems := self.problems():
            raise VerificationError(f"Orbit verification failed: {'; '.join(problems)}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "closure": self.closure,
            "max_distance": self.max_distance,
            "energy_drift": self.energy_drift,
            "ok": bool(self),
        }


def verify_orbit(
    system: ModelSystem,
    orbit: PeriodicOrbit,
    integrator: IntegratorSettings = IntegratorSettings(),
) -> OrbitVerification:
    """
    Integrates ``ż = X_H(z)`` from the first orbit sample over one physical
    period and compares with the sampled orbit
    """
    period = orbit.period_phys
    z0 = orbit.samples[0]
    t_eval = orbit.times * period

    def rhs(_t: float, z: FloatArray) -> FloatArray:
        return system.vector_field(z)

    sol = solve_ivp(
        rhs,
        (0.0, period),
        z0,
        method=integrator.method,
        t_eval=np.append(t_eval, period),
        rtol=integrator.rtol,
        atol=integrator.atol,
    )
    if not sol.success:
        raise VerificationError(f"orbit integration failed: {sol.message}")
    traj = sol.y.T
    energies = system.hamiltonian(traj)
    report = OrbitVerification(
        closure=float(np.linalg.norm(traj[-1] - z0)),
        max_distance=float(np.max(np.linalg.norm(traj[:-1] - orbit.samples, axis=1))),
        energy_drift=float(np.max(np.abs(energies - energies[0]))),
        rho=orbit.rho,
        epsilon=orbit.epsilon,
        action=orbit.action,
        closure_tol=integrator.closure_tol,
    )
    log.debug(
        "Oracle for orbit at m=%s: %s", format_point(orbit.m), report.get_summary()
    )
    return report


@dataclass(frozen=True)
class LarmorCircle:
    radius: float
    period: float
    speed: float

    def to_dict(self) -> dict[str, float]:
        return {"radius": self.radius, "period": self.period, "speed": self.speed}


def larmor_reference(b: float, energy: float) -> LarmorCircle:
    """
    Cyclotron orbit of ``H = ‖p‖²`` on the flat torus with constant field
    ``B``: speed ``2√E``, angular frequency ``2B``
    """
    if not b > 0 or not energy > 0:
        raise ValueError("Larmor reference needs B > 0 and E > 0")
    return LarmorCircle(
        radius=math.sqrt(energy) / b, period=math.pi / b, speed=2 * math.sqrt(energy)
    )


@dataclass(frozen=True, eq=False)
class OrbitResult:
    search: SearchResult
    candidate: CriticalCandidate
    orbit: PeriodicOrbit
    verification: OrbitVerification
    parameters: dict[str, Any] = field(default_factory=dict)

    @property
    def epsilon(self) -> float:
        return self.orbit.epsilon

    def to_dict(self) -> dict[str, Any]:
        linking = self.search.linking
        return {
            **self.orbit.to_dict(),
            "parameters": {
                **self.parameters,
                "tau": linking.tau,
                "alpha": linking.alpha,
                "beta_floor": linking.beta_floor,
            },
            "search": self.search.to_dict(),
            "verification": self.verification.to_dict(),
        }


def find_orbit(
    system: ModelSystem,
    epsilon: float,
    m: ArrayLike | None = None,
    *,
    profile: ProfileParameters = ProfileParameters(),
    settings: SearchSettings = SearchSettings(),
    integrator: IntegratorSettings = IntegratorSettings(),
    n_samples: int = DEFAULT_ORBIT_SAMPLES,
    plog: PrefixedLogger | None = None,
) -> OrbitResult:
    """
    The whole pipeline for one level: minimax search, base-point polish,
    orbit extraction and the independent oracle
    """
    if plog is None:
        plog = log.sublogger(f"epsilon={epsilon:g}")
    if m is None:
        m = system.default_base_point()
    family = profile.family(system, epsilon)
    search = minimax_search(family, m, settings, plog)
    if not search.candidate.converged:
        raise UnconvergedError(
            f"gradient budget of {settings.budget} ran out before the sup point"
            f" polished (‖∇F‖ = {search.candidate.grad_norm:.3e})"
        )
    candidate = base_polish(family, search.candidate, settings, plog)
    hm = family.at(candidate.m)
    orbit = loop_to_orbit(hm, candidate, n_samples)
    verification = verify_orbit(system, orbit, integrator)
    verification.check()
    orbit = replace(orbit, closure_residual=verification.closure)
    plog.info(
        "Verified orbit: H=%.10g, T=%.10g, radius=%.8g, action=%.6g, closure=%.2e",
        orbit.energy,
        orbit.period_phys,
        orbit.radius,
        orbit.action,
        orbit.closure_residual,
    )
    return OrbitResult(
        search=search,
        candidate=candidate,
        orbit=orbit,
        verification=verification,
        parameters=hm.describe(),
    )


@dataclass
class LevelSequenceReport:
    epsilons: list[float]
    orbits: list[OrbitResult] = field(default_factory=list)
    #: ``(ε, error type, message)`` per failed level
    failures: list[tuple[float, str, str]] = field(default_factory=list)

    @property
    def successes(self) -> int:
        return len(self.orbits)

    @property
    def monotone(self) -> bool:
        """Orbit energies decrease along the (decreasing) ε list"""
        energies = [r.orbit.energy for r in self.orbits]
        return all(b < a for a, b in zip(energies, energies[1:]))

    def __bool__(self) -> bool:
        return bool(self.orbits)

    def get_summary(self) -> str:
        msg = f"{self.successes} of {quantify(len(self.epsilons), 'level')} verified"
        if self.failures:
            failed = ", ".join(f"{e:g}" for e, _, _ in self.failures)
            msg += f"; failed at ε = {failed}"
        if len(self.orbits) > 1:
            msg += "; energies decrease" if self.monotone else "; energies NOT monotone"
        return msg

    def to_dict(self) -> dict[str, Any]:
        return {
            "epsilons": self.epsilons,
            "successes": self.successes,
            "monotone": self.monotone,
            "orbits": [r.to_dict() for r in self.orbits],
            "failures": [
                {"epsilon": e, "error": kind, "message": msg}
                for e, kind, msg in self.failures
            ],
        }


async def level_sequence_experiment(
    system: ModelSystem,
    epsilon_list: Sequence[float],
    m: ArrayLike | None = None,
    *,
    profile: ProfileParameters = ProfileParameters(),
    settings: SearchSettings = SearchSettings(),
    integrator: IntegratorSettings = IntegratorSettings(),
    n_samples: int = DEFAULT_ORBIT_SAMPLES,
    workers: int = DEFAULT_WORKERS,
) -> LevelSequenceReport:
    """
    Runs `find_orbit` for every ``ε`` on a worker pool; per-level failures
    are recorded in the report
    """
    eps_list = [float(e) for e in epsilon_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError("level sequence epsilons must be decreasing")
    report = LevelSequenceReport(epsilons=eps_list)
    if not eps_list:
        return report

    async def run_one(eps: float) -> OrbitResult:
        func = partial(
            find_orbit,
            system,
            eps,
            m,
            profile=profile,
            settings=settings,
            integrator=integrator,
            n_samples=n_samples,
        )
        return await anyio.to_thread.run_sync(func)

    pool = await pool_amap(run_one, aiter_items(eps_list), workers=workers)
    report.orbits = sorted(
        (r for _, r in pool.results), key=lambda r: r.epsilon, reverse=True
    )
    for eps, e in sorted(pool.failed, key=lambda f: f[0], reverse=True):
        if not isinstance(e, OrbitlabError):
            raise e
        report.failures.append((eps, type(e).__name__, str(e)))
    log.info("Level sequence: %s", report.get_summary())
    if not report.monotone:
        log.warning("Orbit energies do not decrease along the ε sequence")
    return report
