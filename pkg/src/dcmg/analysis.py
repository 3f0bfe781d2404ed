"""Stability and performance metrics on traces, plus the theoretical bound quantities."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controller import verify_envelope
from .graph import condition_ratio
from .sim import DIVERGENCE_FACTOR, Trace

VOLTAGE_BOUND = 2.0
SPREAD_BOUND = 0.05
GROWTH_FACTOR = 10.0


def regulation_error(theta, theta_ref) -> np.ndarray:
    """eps = Theta - Theta_ref (``theta_ref`` scalar or per-node vector)."""
    return np.asarray(theta, dtype=float) - theta_ref


def theoretical_zeta_bound(alpha, upsilon, gamma, kappa, eta, beta):
    """max{ sqrt(upsilon*eta + gamma! * kappa / alpha), sqrt(beta) }.

    Elementwise over array arguments; returns a float for scalar inputs.
    """
    if int(gamma) != gamma or gamma < 0:
        raise ValueError("gamma must be a nonnegative integer")
    attack_term = np.sqrt(np.asarray(upsilon) * eta + math.factorial(int(gamma)) * np.asarray(kappa) / alpha)
    out = np.maximum(attack_term, np.sqrt(beta))
    return float(out) if np.ndim(out) == 0 else out


def xi_tilde_closed_form(xi0, t, zeta_sq, alpha, upsilon, rho) -> np.ndarray:
    """Variation-of-constants solution for xi_tilde at the sample times ``t``.

    Integrates ``alpha * exp(-c (t - tau)) * zeta_sq(tau)`` with ``c = alpha*upsilon + rho``
    step by step with product quadrature: on each sample interval ``zeta_sq`` is
    replaced by the cubic through the four nearest samples and the exponential
    kernel is integrated exactly.  ``t`` must start at 0.  Works per node when
    ``zeta_sq`` is ``(samples, n)``.
    """
    t = np.asarray(t, dtype=float)
    f = np.asarray(zeta_sq, dtype=float)
    c = np.asarray(alpha, dtype=float) * np.asarray(upsilon) + np.asarray(rho)
    alpha = np.asarray(alpha, dtype=float)
    out = np.empty(f.shape)
    out[0] = xi0
    npts = min(4, t.size)
    for k in range(t.size - 1):
        h = t[k + 1] - t[k]
        lo = max(0, min(k - 1, t.size - npts))
        idx = np.arange(lo, lo + npts)
        nodes = t[idx] - t[k]
        moments = _kernel_moments(c, h, npts)
        # weights of the interpolating polynomial: solve V^T w = moments
        w = np.linalg.solve(np.vander(nodes, npts, increasing=True).T, moments)
        out[k + 1] = np.exp(-c * h) * out[k] + alpha * np.einsum("j...,j...->...", w, f[idx])
    return out


def _kernel_moments(c, h, count):
    """int_0^h exp(-c (h - s)) s**p ds for p = 0 .. count-1."""
    m = [-np.expm1(-c * h) / c]
    for p in range(1, count):
        m.append((h**p - p * m[-1]) / c)
    return np.array(m)


def homogeneous_settling_time(trace: Trace, tol=1e-3) -> float:
    """Time for the initial-condition part of xi_tilde to decay below ``tol`` at every node."""
    c = trace.scenario.control
    if c.kind != "resilient":
        return 0.0
    rate = np.asarray(c.alpha) * np.asarray(c.upsilon) + np.asarray(c.rho)
    x0 = np.maximum(np.abs(trace.xi_tilde[0]), tol)
    return float(np.max(np.log(x0 / tol) / rate))


def tail_mask(trace: Trace, tail_fraction) -> np.ndarray:
    horizon = trace.scenario.t_end
    return trace.t >= horizon * (1.0 - tail_fraction) - 1e-12


def estimate_eta(trace: Trace, tail_fraction=0.1) -> float:
    """Empirical ultimate bound of xi_tilde: sup over the tail window, all nodes."""
    if trace.xi.shape[2] == 0:
        return 0.0
    xt = trace.xi_tilde[tail_mask(trace, tail_fraction)]
    xt = xt[np.all(np.isfinite(xt), axis=1)]
    return float(np.max(np.abs(xt))) if xt.size else 0.0


def attack_kappa(trace: Trace) -> np.ndarray:
    s = trace.scenario
    if "kappa" in trace.meta:
        return np.asarray(trace.meta["kappa"])
    return np.array([
        verify_envelope(s.attack, i, s.t_end, s.dt) if s.attack.onset[i] < s.t_end else 0.0
        for i in range(s.n)
    ])


def decrease_rate(trace: Trace):
    """``(t, D)`` with D = sum_i K_i zeta_i dzeta_i/dt at interior samples (central differences)."""
    t, z = trace.t, trace.zeta
    dz = (z[2:] - z[:-2]) / (t[2:] - t[:-2])[:, None]
    d = np.sum(trace.gain_sum[1:-1] * z[1:-1] * dz, axis=1)
    return t[1:-1], d


@dataclass(frozen=True)
class Violation:
    t: float
    rate: float
    min_margin: float  # min_i |zeta_i| - bound_i, > 0 by construction


def lyapunov_decrease_monitor(trace: Trace, eta=None, beta=None, tol=1e-9, settle_time=None):
    """Samples where the Lyapunov surrogate increases although every |zeta_i| is outside the bound."""
    s = trace.scenario
    c = s.control
    beta = condition_ratio(s.graph) if beta is None else beta
    eta = estimate_eta(trace) if eta is None else eta
    if c.kind == "resilient":
        bound = theoretical_zeta_bound(np.asarray(c.alpha), np.asarray(c.upsilon), c.gamma,
                                       attack_kappa(trace), eta, beta)
    else:
        bound = np.full(s.n, math.sqrt(beta))
    t_settle = homogeneous_settling_time(trace) if settle_time is None else settle_time
    t, d = decrease_rate(trace)
    margin = np.min(np.abs(trace.zeta[1:-1]) - bound, axis=1)
    hits = (d > tol) & (margin > 0) & (t >= t_settle)
    return [Violation(float(t[k]), float(d[k]), float(margin[k])) for k in np.flatnonzero(hits)]


@dataclass(frozen=True)
class UubReport:
    settled: bool
    diverged: bool
    ultimate_bound_estimate: float
    voltage_deviation: float
    pu_spread: float
    settling_time: float | None
    eta: float
    tail_start: float

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _within(trace: Trace, v_bound, pu_bound):
    """Per-sample flag: voltage band and current spread (or |eps| for reduced traces) satisfied."""
    if trace.v is None:
        return np.max(np.abs(trace.eps), axis=1) <= v_bound
    vdev = np.max(np.abs(trace.v - trace.scenario.bank.v_ref), axis=1)
    return (vdev <= v_bound) & (np.ptp(trace.pu, axis=1) <= pu_bound)


def _pre_attack_eps(trace: Trace) -> float:
    s = trace.scenario
    active = np.any(s.attack.coeffs != 0, axis=1)
    norms = trace.eps_norm
    if active.any():
        onset = s.attack.onset[active].min()
        window = (trace.t < onset) & (trace.t >= 0.9 * onset)
        if window.any():
            return float(norms[window].max())
    return float(norms[0])


def uub_metrics(trace: Trace, tail_fraction=0.5, v_bound=VOLTAGE_BOUND, pu_bound=SPREAD_BOUND) -> UubReport:
    if not 0.0 < tail_fraction < 1.0:
        raise ValueError("tail_fraction must lie in (0, 1)")
    s = trace.scenario
    tail = tail_mask(trace, tail_fraction)
    if trace.diverged and not tail.any():
        tail = np.zeros(trace.t.size, dtype=bool)
        tail[-1] = True
    ok = _within(trace, v_bound, pu_bound)
    in_band = bool(np.all(ok[tail])) and not trace.diverged

    eps_bound = float(np.max(np.abs(trace.eps[tail])))
    if trace.v is not None:
        vdev = float(np.max(np.abs(trace.v[tail] - s.bank.v_ref)))
        spread = float(np.max(np.ptp(trace.pu[tail], axis=1)))
    else:
        vdev, spread = eps_bound, float("nan")

    norms = trace.eps_norm
    k = max(1, min(10, norms.size - 1))
    growing = norms.size > 1 and norms[-1] > norms[-1 - k]
    exploded = norms[-1] > GROWTH_FACTOR * _pre_attack_eps(trace) and growing
    over_limit = trace.v is not None and np.any(np.abs(trace.v) > DIVERGENCE_FACTOR * s.bank.v_ref)
    diverged = bool(trace.diverged or over_limit or (exploded and not in_band))

    settling = None
    if ok[-1] and not diverged:
        bad = np.flatnonzero(~ok)
        settling = float(trace.t[bad[-1] + 1]) if bad.size else float(trace.t[0])
    return UubReport(
        settled=in_band and not diverged,
        diverged=diverged,
        ultimate_bound_estimate=eps_bound,
        voltage_deviation=vdev,
        pu_spread=spread,
        settling_time=settling,
        eta=estimate_eta(trace),
        tail_start=float(trace.t[tail][0]),
    )
