"""Attack-resilient adaptive secondary controller, static-gain baseline, and attack signals.

The adaptive coupling gain of node ``i`` is the sum ``xi^(0) + ... + xi^(gamma)``.
The first ``gamma`` terms form an integrator chain (``d/dt xi^(mu) = xi^(mu+1)``);
the top term ``xi^(gamma)`` is algebraic::

    xi^(gamma) = alpha * (zeta**2 - upsilon * (xi^(gamma-1) - xi_hat))
    d/dt xi_hat = rho * (xi^(gamma-1) - xi_hat)

Chains are stored as arrays of shape ``(n, gamma)`` with column ``mu`` holding
``xi^(mu)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import CommGraph
from .plant import ConverterBank


class EnvelopeViolation(ValueError):
    """Attack signal cannot satisfy |delta(t)| <= kappa * t**gamma."""


@dataclass(frozen=True)
class ResilientGainState:
    xi: np.ndarray
    xi_hat: np.ndarray
    alpha: np.ndarray
    upsilon: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        xi = np.atleast_2d(np.asarray(self.xi, dtype=float))
        n = xi.shape[0]
        object.__setattr__(self, "xi", xi)
        for name in ("xi_hat", "alpha", "upsilon", "rho"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy()
            object.__setattr__(self, name, arr)
        if self.gamma < 1:
            raise ValueError("adaptive law needs gamma >= 1; use the static-gain baseline for gamma = 0")
        if np.any(self.alpha <= 0) or np.any(self.upsilon <= 0) or np.any(self.rho <= 0):
            raise ValueError("alpha, upsilon and rho must be positive")

    @property
    def gamma(self) -> int:
        return self.xi.shape[1]

    @property
    def n(self) -> int:
        return self.xi.shape[0]

    @property
    def xi_tilde(self) -> np.ndarray:
        return self.xi[:, -1] - self.xi_hat

    def check_initial(self):
        """Initial gains must give xi_tilde(0) >= 0."""
        bad = np.flatnonzero(self.xi_tilde < 0)
        if bad.size:
            raise ValueError(
                f"xi^(gamma-1)(0) - xi_hat(0) < 0 at nodes {(bad + 1).tolist()}; "
                "initial gains must satisfy xi_tilde(0) >= 0"
            )


def neighborhood_error(i, v, i_out, bank: ConverterBank, g: CommGraph) -> float:
    """zeta_i from neighbor voltages, weighted currents, and (if pinned) V_ref."""
    r_i = bank.virtual_impedance * np.asarray(i_out)
    zeta = g.pinning[i] * (bank.v_ref - v[i])
    for j in range(g.n):
        a_ij = g.adjacency[i, j]
        if a_ij:
            zeta += a_ij * (v[j] - v[i]) + a_ij * (r_i[j] - r_i[i])
    return float(zeta)


def neighborhood_errors(v, i_out, bank: ConverterBank, g: CommGraph) -> np.ndarray:
    """All zeta_i at once."""
    theta = np.asarray(v) + bank.virtual_impedance * np.asarray(i_out)
    a = g.adjacency
    return a @ theta - a.sum(axis=1) * theta + g.pinning * (bank.v_ref - np.asarray(v))


def top_gain(zeta, xi_top, xi_hat, alpha, upsilon):
    """Algebraic top coupling term xi^(gamma); works elementwise on arrays."""
    return alpha * (zeta * zeta - upsilon * (xi_top - xi_hat))


def control_input(i, zeta_i, gains: ResilientGainState) -> float:
    top = top_gain(zeta_i, gains.xi[i, -1], gains.xi_hat[i], gains.alpha[i], gains.upsilon[i])
    return float((gains.xi[i].sum() + top) * zeta_i)


def gain_derivatives(i, zeta_i, gains: ResilientGainState):
    """``(d/dt xi chain of node i, d/dt xi_hat_i)``."""
    top = top_gain(zeta_i, gains.xi[i, -1], gains.xi_hat[i], gains.alpha[i], gains.upsilon[i])
    dchain = np.append(gains.xi[i, 1:], top)
    dhat = gains.rho[i] * (gains.xi[i, -1] - gains.xi_hat[i])
    return dchain, float(dhat)


def resilient_rates(zeta, xi, xi_hat, alpha, upsilon, rho):
    """Vectorized controller evaluation.

    Returns ``(u, dxi, dxi_hat, gain_sum)`` for all nodes, with ``xi`` of shape ``(n, gamma)``.
    """
    top = top_gain(zeta, xi[:, -1], xi_hat, alpha, upsilon)
    gain_sum = xi.sum(axis=1) + top
    dxi = np.empty_like(xi)
    dxi[:, :-1] = xi[:, 1:]
    dxi[:, -1] = top
    return gain_sum * zeta, dxi, rho * (xi[:, -1] - xi_hat), gain_sum


def baseline_control_input(i, zeta_i, static_gain) -> float:
    """Static-gain cooperative control ``c * zeta_i``."""
    if not static_gain > 0:
        raise ValueError("static gain must be positive")
    return float(static_gain * zeta_i)


@dataclass(frozen=True)
class AttackModel:
    """Polynomial input-channel attacks ``delta_i(t) = sum_k c_k t**k`` for ``t >= onset_i``.

    ``coeffs`` has shape ``(n, m)`` with ascending powers; time is absolute
    simulation time, not time since onset.
    """

    onset: np.ndarray
    coeffs: np.ndarray
    gamma: int

    def __post_init__(self):
        coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        onset = np.broadcast_to(np.asarray(self.onset, dtype=float), (coeffs.shape[0],)).copy()
        if np.any(onset < 0):
            raise ValueError("attack onset must be nonnegative")
        if int(self.gamma) < 0:
            raise ValueError("envelope order gamma must be >= 0")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "onset", onset)
        object.__setattr__(self, "gamma", int(self.gamma))

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @classmethod
    def none(cls, n, gamma=0) -> "AttackModel":
        return cls(np.zeros(n), np.zeros((n, 1)), gamma)

    def degree(self, i) -> int:
        nz = np.flatnonzero(self.coeffs[i])
        return int(nz[-1]) if nz.size else -1

    def values(self, t) -> np.ndarray:
        """delta(t) for all nodes."""
        powers = t ** np.arange(self.coeffs.shape[1])
        return np.where(t >= self.onset, self.coeffs @ powers, 0.0)


def attack_value(m: AttackModel, i, t) -> float:
    if t < m.onset[i]:
        return 0.0
    return float(np.polynomial.polynomial.polyval(t, m.coeffs[i]))


def verify_envelope(m: AttackModel, i, horizon, dt=1e-3) -> float:
    """Smallest kappa with |delta_i(t)| <= kappa * t**gamma on the sampled grid [onset, horizon]."""
    deg = m.degree(i)
    if deg < 0:
        return 0.0
    if deg > m.gamma:
        raise EnvelopeViolation(
            f"node {i + 1}: attack polynomial degree {deg} exceeds envelope order gamma={m.gamma}"
        )
    t0 = m.onset[i]
    if horizon <= t0:
        raise ValueError(f"horizon {horizon} must exceed onset {t0}")
    steps = int(round((horizon - t0) / dt))
    t = t0 + dt * np.arange(steps + 1)
    mag = np.abs(np.polynomial.polynomial.polyval(t, m.coeffs[i]))
    envelope = t ** m.gamma
    at_zero = envelope == 0.0
    if np.any(mag[at_zero] > 0):
        raise EnvelopeViolation(
            f"node {i + 1}: delta(0) = {mag[at_zero][0]:g} is nonzero but kappa * 0**gamma = 0"
        )
    ratio = mag[~at_zero] / envelope[~at_zero]
    return float(ratio.max()) if ratio.size else 0.0
