"""Alternating minimization of the aggregation MSE over all transceiver scalars.

One outer sweep updates, in order: the device transmit scalars (a convex QCQP
with per-device closed forms once the few relay power constraints are priced
by dual multipliers), the relay scalars (closed form plus radial projection
onto the per-relay power cap), and the two receive scalars (exact closed
forms).  The objective is always evaluated through ``aggregation.relay_mse``
so there is a single source of truth for the MSE.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .aggregation import (
    DeviceWeights,
    PowerBudget,
    SingularChannelError,
    TransceiverConfig,
    relay_mse,
)
from .geometry import ChannelRealization


class SchemeVariant(Enum):
    FULL = "full"
    RELAY_ONLY = "relay_only"
    NO_RELAY_SINGLEPHASE = "no_relay_singlephase"


@dataclass(frozen=True)
class SolverConfig:
    """Outer-loop limits and inner QCQP tolerances."""

    j_max: int = 100
    epsilon: float = 1e-4
    qcqp_tol: float = 1e-8
    qcqp_max_iter: int = 300

    def __post_init__(self):
        if self.j_max < 1 or self.qcqp_max_iter < 1:
            raise ValueError("iteration limits must be positive")
        if self.epsilon <= 0 or self.qcqp_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class SolverTrace:
    """Objective value after initialization and after each sweep."""

    objectives: np.ndarray
    iterations_run: int
    terminated_by: str  # "converged" or "max_iterations"
    warnings: tuple[str, ...] = ()


def _phase1_budget(budget: PowerBudget, variant: SchemeVariant) -> float:
    # The relay-only baseline does not retransmit in phase 2, so its devices
    # spend the whole 2 * p0 budget in phase 1.
    return 2.0 * budget.p0 if variant is SchemeVariant.RELAY_ONLY else budget.p0


def init_config(channels: ChannelRealization, weights: DeviceWeights,
                budget: PowerBudget,
                variant: SchemeVariant = SchemeVariant.FULL) -> TransceiverConfig:
    """Channel-inversion starting point with all relay power constraints active.

    Devices split their budget evenly across the phases and invert the direct
    channel; the receive scalars are set so the two direct copies already sum
    to the target weights.  Relay scalars start at full transmit power.
    """
    if variant is SchemeVariant.NO_RELAY_SINGLEPHASE:
        raise ValueError("single-phase scheme has a closed form; use norelay_optimum")
    h = channels.h
    rho = weights.rho
    if h.shape != rho.shape:
        raise ValueError("channel and weight lengths differ")
    mag = np.abs(h)
    if np.any(mag == 0):
        raise SingularChannelError("zero device-to-AP channel")
    peak = float(np.max(rho / mag))
    p1 = _phase1_budget(budget, variant)

    if variant is SchemeVariant.RELAY_ONLY:
        a1 = np.sqrt(p1) * rho / (h * peak)
        a2 = np.zeros_like(a1)
        c1 = 0.0 + 0.0j
        c2 = complex(peak / np.sqrt(p1))
    else:
        a1 = np.sqrt(budget.p0) * rho / (h * peak)
        a2 = a1.copy()
        c1 = c2 = complex(peak / (2.0 * np.sqrt(budget.p0)))

    if channels.num_relays:
        received = (np.abs(channels.g) ** 2).T @ (np.abs(a1) ** 2) + budget.sigma2
        b = np.sqrt(budget.pr / received).astype(complex)
    else:
        b = np.zeros(0, dtype=complex)
    return TransceiverConfig(a1=a1, a2=a2, b=b, c1=c1, c2=c2)


def _theta_phi(config: TransceiverConfig,
               channels: ChannelRealization) -> tuple[np.ndarray, np.ndarray]:
    """Per-device effective gains multiplying a1 and a2 in the combined estimate."""
    relay_path = channels.g @ (channels.f * config.b) if config.b.size else 0.0
    theta = config.c1 * channels.h + config.c2 * relay_path
    phi = config.c2 * channels.h
    return np.asarray(theta, dtype=complex), np.asarray(phi, dtype=complex)


def _misalignment(theta, phi, a1, a2, rho) -> float:
    return float(np.sum(np.abs(theta * a1 + phi * a2 - rho) ** 2))


def _clamp_disc(a: np.ndarray, radius: float) -> np.ndarray:
    """Project each entry onto the disc of the given radius."""
    if radius <= 0:
        return np.zeros_like(a)
    mag = np.abs(a)
    scale = np.where(mag > radius, radius / np.where(mag == 0, 1.0, mag), 1.0)
    return a * scale


def _relay_ellipsoids(config: TransceiverConfig, channels: ChannelRealization,
                      budget: PowerBudget):
    """Per-relay quadratic constraints on a1 induced by the fixed relay scalars."""
    out = []
    for n in range(config.b.size):
        bn = abs(config.b[n])
        if bn == 0:
            continue
        w = np.abs(channels.g[:, n]) ** 2
        r2 = budget.pr / bn**2 - budget.sigma2
        out.append((w, max(r2, 0.0)))
    return out


def _box_candidate(theta, phi, rho, a1_in, a2_in, r1: float, r2: float):
    """Exact minimizer of the device objective under the per-device power boxes only.

    Per device the objective depends on u = theta * a1 and v = phi * a2, which
    range over discs of radii |theta| r1 and |phi| r2; the best feasible u + v
    is the point of that disc sum closest to rho.  Among zero-error splits the
    minimum-norm one is chosen so the output is deterministic.
    """
    w1 = np.abs(theta) * r1
    w2 = np.abs(phi) * r2
    m = rho
    power = np.abs(theta) ** 2 + np.abs(phi) ** 2
    u_star = np.where(power > 0, m * np.abs(theta) ** 2 / np.where(power > 0, power, 1.0), 0.0)
    lo = np.maximum(0.0, m - w2)
    hi = np.minimum(w1, m)
    reachable = w1 + w2 >= m
    u = np.where(reachable, np.minimum(np.maximum(u_star, lo), hi), w1)
    v = np.where(reachable, m - u, w2)

    th_ok = np.abs(theta) > 0
    ph_ok = np.abs(phi) > 0
    a1 = np.where(th_ok, u * np.conj(theta) / np.where(th_ok, np.abs(theta) ** 2, 1.0),
                  _clamp_disc(a1_in, r1))
    a2 = np.where(ph_ok, v * np.conj(phi) / np.where(ph_ok, np.abs(phi) ** 2, 1.0),
                  _clamp_disc(a2_in, r2))
    return a1, a2


def _penalized_split(theta, phi, rho, mu, r1: float, r2: float):
    """Per-device minimizer of |theta a1 + phi a2 - rho|^2 + mu |a1|^2 on the boxes.

    With the relay constraints priced into the quadratic penalty mu >= 0, the
    optimum per device aligns both copies with the (positive real) target:
    the direct phase-2 copy absorbs as much as it can for free, the remainder
    goes through a1 shrunk by the penalty-to-curvature ratio.
    """
    w1 = np.abs(theta) * r1
    w2 = np.abs(phi) * r2
    th2 = np.abs(theta) ** 2
    th_ok = th2 > 0
    c = np.where(th_ok, mu / np.where(th_ok, th2, 1.0), np.inf)
    short = np.maximum(rho - w2, 0.0)
    with np.errstate(invalid="ignore"):
        u = np.where(th_ok, np.minimum(short / (1.0 + c), w1), 0.0)
    u = np.where(np.isfinite(u), u, 0.0)
    v = np.minimum(np.maximum(rho - u, 0.0), w2)
    ph_ok = np.abs(phi) > 0
    a1 = np.where(th_ok, u * np.conj(theta) / np.where(th_ok, th2, 1.0), 0.0)
    a2 = np.where(ph_ok, v * np.conj(phi) / np.where(ph_ok, np.abs(phi) ** 2, 1.0), 0.0)
    return a1, a2


def update_device_scalars(config: TransceiverConfig, channels: ChannelRealization,
                          weights: DeviceWeights, budget: PowerBudget,
                          solver_cfg: SolverConfig, *, phase1_budget: float | None = None,
                          pin_a2_zero: bool = False):
    """Minimize the misalignment over (a1, a2) with the other blocks fixed.

    Returns (a1, a2, converged).  The feasible set is the per-device power
    boxes intersected with the per-relay quadratic constraints on a1.  When
    the relay constraints are slack at the box-only optimum that closed form
    is returned directly.  Otherwise the relay constraints are dualized: for
    fixed multipliers the problem separates into per-device closed forms; the
    multipliers are driven to complementary slackness by monotone coordinate
    bisection with a Newton polish on the active set.  The result is feasible
    and never has a larger objective than the input; `converged` is False only
    if the duality gap could not be pushed below ``qcqp_tol`` (relative to the
    squared weight norm) within the iteration budget.
    """
    rho = weights.rho
    theta, phi = _theta_phi(config, channels)
    p1 = budget.p0 if phase1_budget is None else phase1_budget
    r1 = float(np.sqrt(p1))
    r2 = 0.0 if pin_a2_zero else float(np.sqrt(budget.p0))
    if pin_a2_zero:
        phi = np.zeros_like(phi)
    ellipsoids = _relay_ellipsoids(config, channels, budget)

    def constraint_values(a1):
        return np.array([float(np.sum(w * np.abs(a1) ** 2)) - rsq
                         for w, rsq in ellipsoids])

    cand1, cand2 = _box_candidate(theta, phi, rho, config.a1, config.a2, r1, r2)
    if not ellipsoids or np.all(constraint_values(cand1) <= 0):
        return cand1, cand2, True

    weights_mat = np.stack([w for w, _ in ellipsoids], axis=1)  # (K, Na)
    radii_sq = np.array([rsq for _, rsq in ellipsoids])
    if np.any(radii_sq <= 0):
        # A relay already spends its whole budget on forwarded noise; phase-1
        # transmission must stop entirely.
        a1, a2 = _penalized_split(theta, phi, rho, np.full(rho.size, np.inf), r1, r2)
        return a1, a2, True

    def primal(lam):
        mu = weights_mat @ lam
        a1, a2 = _penalized_split(theta, phi, rho, mu, r1, r2)
        return a1, a2, (np.abs(a1) ** 2) @ weights_mat - radii_sq

    def make_feasible(a1, a2, h):
        if np.all(h <= 0):
            return a1, a2
        shrink = float(np.min(np.sqrt(radii_sq / (radii_sq + np.maximum(h, 0.0)))))
        a1 = a1 * shrink
        # Re-balance the free direct copy for the shrunk relayed copy.
        v = np.minimum(np.maximum(rho - np.abs(theta * a1), 0.0), np.abs(phi) * r2)
        ph_ok = np.abs(phi) > 0
        a2 = np.where(ph_ok, v * np.conj(phi) / np.where(ph_ok, np.abs(phi) ** 2, 1.0),
                      0.0)
        return a1, a2

    # Penalty scale at which even the strongest device would be halved.
    th2 = np.abs(theta) ** 2
    lam_scale = np.array([
        max(float(np.max(th2[w > 0] / w[w > 0], initial=1.0)), 1e-300)
        for w, _ in ellipsoids
    ])
    obj_scale = float(np.sum(rho**2))
    gap_tol = solver_cfg.qcqp_tol * obj_scale
    short = np.maximum(rho - np.abs(phi) * r2, 0.0)

    def duality_gap(lam):
        a1, a2, h = primal(lam)
        dual_value = _misalignment(theta, phi, a1, a2, rho) + float(lam @ h)
        f1, f2 = make_feasible(a1, a2, h)
        return _misalignment(theta, phi, f1, f2, rho) - dual_value, (f1, f2), h

    def bisect_cycle(lam):
        for n in range(len(ellipsoids)):
            def at(value):
                probe = lam.copy()
                probe[n] = value
                return primal(probe)[2][n]

            if at(0.0) <= 0:
                lam[n] = 0.0
                continue
            lo, hi = 0.0, max(lam[n], lam_scale[n])
            for _ in range(200):
                if at(hi) <= 0:
                    break
                lo, hi = hi, hi * 8.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if at(mid) > 0:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= 1e-13 * hi:
                    break
            lam[n] = hi
        return lam

    def newton_polish(lam, gap, point):
        # Solve the active complementarity system h(lam) = 0 with the analytic
        # Jacobian; degenerate multiplier trade-offs that stall coordinate
        # ascent collapse in a few least-squares steps.  Steps are accepted
        # only if they shrink the duality gap.
        for _ in range(30):
            mu = weights_mat @ lam
            denom = th2 + mu
            u = np.where(th2 > 0, np.minimum(short * th2 / np.where(denom > 0, denom, 1.0),
                                             np.abs(theta) * r1), 0.0)
            interior = (u > 0) & (u < np.abs(theta) * r1 - 1e-300) & (th2 > 0)
            sensitivity = np.where(interior, -2.0 * u**2 / (th2 * denom), 0.0)
            _, _, h = primal(lam)
            active = lam > 0
            if not np.any(active):
                break
            jac = (weights_mat.T * sensitivity) @ weights_mat
            step = np.zeros_like(lam)
            sub = np.ix_(active, active)
            sol, *_ = np.linalg.lstsq(jac[sub], -h[active], rcond=None)
            step[active] = sol
            if not np.all(np.isfinite(step)):
                break
            improved = False
            scale = 1.0
            for _ in range(3):
                cand = np.maximum(lam + scale * step, 0.0)
                cand_gap, cand_point, _ = duality_gap(cand)
                if cand_gap < gap:
                    lam, gap, point = cand, cand_gap, cand_point
                    improved = True
                    break
                scale *= 0.25
            if not improved or gap <= gap_tol:
                break
        return lam, gap, point

    lam = np.zeros(len(ellipsoids))
    gap = np.inf
    point = None
    converged = False
    stalled = 0
    for _ in range(solver_cfg.qcqp_max_iter):
        lam = bisect_cycle(lam)
        new_gap, new_point, _ = duality_gap(lam)
        if new_point is not None and new_gap < gap:
            gap, point = new_gap, new_point
        if gap > gap_tol:
            lam, gap, point = newton_polish(lam, gap, point)
        if gap <= gap_tol:
            converged = True
            break
        if new_gap >= gap * (1.0 - 1e-6):
            stalled += 1
            if stalled >= 2:
                break
        else:
            stalled = 0
    a1, a2 = point

    # The incoming point is feasible by the solve-loop invariant; never return
    # anything worse than it, even when the multiplier search exits early.
    incoming1 = _clamp_disc(config.a1, r1)
    incoming2 = _clamp_disc(config.a2, r2)
    if (_misalignment(theta, phi, incoming1, incoming2, rho)
            < _misalignment(theta, phi, a1, a2, rho)):
        a1, a2 = incoming1, incoming2
    return a1, a2, converged


def update_relay_scalars(config: TransceiverConfig, channels: ChannelRealization,
                         weights: DeviceWeights, budget: PowerBudget):
    """Closed-form relay scalars followed by per-relay radial power projection.

    Returns (b, warning).  `warning` is set when the stationarity system is
    singular (for example a zero relay-to-AP gain) and the least-norm solution
    with zero component on the null direction is used instead.
    """
    if config.c2 == 0:
        raise ValueError("relay update requires a nonzero phase-2 receive scalar")
    n_relays = channels.num_relays
    if n_relays == 0:
        return np.zeros(0, dtype=complex), None
    g = channels.g
    a1 = config.a1
    power1 = np.abs(a1) ** 2
    system = config.c2 * (
        (g.conj().T * power1) @ g + budget.sigma2 * np.eye(n_relays)
    ) @ np.diag(channels.f)
    residual_target = (weights.rho - channels.h * (config.c1 * a1 + config.c2 * config.a2))
    rhs = g.conj().T @ (residual_target * np.conj(a1))

    warning = None
    try:
        b_hat = np.linalg.solve(system, rhs)
        ok = np.all(np.isfinite(b_hat)) and (
            np.linalg.norm(system @ b_hat - rhs) <= 1e-8 * max(np.linalg.norm(rhs), 1e-300)
        )
    except np.linalg.LinAlgError:
        ok = False
    if not ok:
        b_hat = np.linalg.pinv(system) @ rhs
        warning = "singular relay stationarity system; least-norm solution used"

    cap = budget.pr / ((np.abs(g) ** 2).T @ power1 + budget.sigma2)
    mag = np.abs(b_hat)
    scale = np.where(mag > np.sqrt(cap), np.sqrt(cap) / np.where(mag == 0, 1.0, mag), 1.0)
    return b_hat * scale, warning


def update_c1(config: TransceiverConfig, channels: ChannelRealization,
              weights: DeviceWeights, sigma2: float) -> complex:
    """Exact minimizer of the MSE over the phase-1 receive scalar."""
    relay_path = channels.g @ (channels.f * config.b) if config.b.size else 0.0
    direct1 = channels.h * config.a1
    rest = config.c2 * (channels.h * config.a2 + config.a1 * relay_path)
    numerator = np.sum((weights.rho - rest) * np.conj(direct1))
    denominator = float(np.sum(np.abs(direct1) ** 2)) + sigma2
    return complex(numerator / denominator)


def update_c2(config: TransceiverConfig, channels: ChannelRealization,
              weights: DeviceWeights, sigma2: float) -> complex:
    """Exact minimizer of the MSE over the phase-2 receive scalar."""
    relay_path = channels.g @ (channels.f * config.b) if config.b.size else 0.0
    phase2 = channels.h * config.a2 + config.a1 * relay_path
    forwarded = float(np.sum(np.abs(channels.f * config.b) ** 2)) if config.b.size else 0.0
    numerator = np.sum((weights.rho - config.c1 * channels.h * config.a1) * np.conj(phase2))
    denominator = float(np.sum(np.abs(phase2) ** 2)) + (1.0 + forwarded) * sigma2
    return complex(numerator / denominator)


def solve(channels: ChannelRealization, weights: DeviceWeights, budget: PowerBudget,
          solver_cfg: SolverConfig, variant: SchemeVariant = SchemeVariant.FULL,
          warm_start: TransceiverConfig | None = None):
    """Run the alternating minimization until the relative improvement drops below
    epsilon or the sweep limit is reached.

    Returns (config, trace).  The trace objective sequence starts at the
    initial configuration and is non-increasing: each block update either
    descends or is rejected (the relay closed form is kept only if it does not
    raise the objective, which can happen when several projected relay scalars
    interact).  For the relay-only variant a2 and c1 are pinned at zero and
    phase 1 carries the full device budget.
    """
    if variant is SchemeVariant.NO_RELAY_SINGLEPHASE:
        raise ValueError("single-phase scheme has a closed form; use norelay_optimum")
    relay_only = variant is SchemeVariant.RELAY_ONLY
    p1 = _phase1_budget(budget, variant)
    config = warm_start if warm_start is not None else init_config(
        channels, weights, budget, variant)
    if relay_only:
        config = replace(config, a2=np.zeros_like(config.a2), c1=0.0 + 0.0j)

    warnings: list[str] = []
    objectives = [relay_mse(config, channels, weights, budget.sigma2)]
    iterations = 0
    terminated = "max_iterations"
    for _ in range(solver_cfg.j_max):
        iterations += 1
        a1, a2, inner_ok = update_device_scalars(
            config, channels, weights, budget, solver_cfg,
            phase1_budget=p1, pin_a2_zero=relay_only)
        if not inner_ok:
            warnings.append(f"sweep {iterations}: device QCQP gap above tolerance at exit")
        config = replace(config, a1=a1, a2=a2)

        if channels.num_relays and config.c2 != 0:
            before = relay_mse(config, channels, weights, budget.sigma2)
            b, warn = update_relay_scalars(config, channels, weights, budget)
            if warn:
                warnings.append(f"sweep {iterations}: {warn}")
            candidate = replace(config, b=b)
            after = relay_mse(candidate, channels, weights, budget.sigma2)
            if after <= before * (1.0 + 1e-12):
                config = candidate
            else:
                warnings.append(f"sweep {iterations}: relay update rejected (non-descent)")

        if not relay_only:
            config = replace(config, c1=update_c1(config, channels, weights, budget.sigma2))
        config = replace(config, c2=update_c2(config, channels, weights, budget.sigma2))

        objectives.append(relay_mse(config, channels, weights, budget.sigma2))
        improvement = abs(objectives[-1] - objectives[-2]) / max(abs(objectives[-1]), 1e-300)
        if improvement <= solver_cfg.epsilon:
            terminated = "converged"
            break

    trace = SolverTrace(objectives=np.asarray(objectives), iterations_run=iterations,
                        terminated_by=terminated, warnings=tuple(warnings))
    return config, trace
