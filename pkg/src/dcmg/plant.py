"""Electrical plant: droop-controlled converters over a resistive network.

Each converter ``i`` is an ideal source ``V_n[i]`` behind its virtual
impedance, attached to converter bus ``i``.  Buses ``n+1 ..`` are load/junction
buses.  Bus numbering in configs is 1-based.
"""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .graph import CommGraph, build_matrices


class ConfigError(ValueError):
    """Electrical configuration that has no (unique) solution."""


@dataclass(frozen=True)
class ConverterBank:
    rated_current: np.ndarray
    virtual_impedance: np.ndarray
    v_ref: float
    v_in: float = 80.0
    # documentation only: filter capacitance (F), inductance (H), switching frequency (Hz)
    lc_params: dict = field(default_factory=lambda: {"C": 2.2e-3, "L": 2.64e-3, "f_s": 60e3})

    def __post_init__(self):
        rated = np.asarray(self.rated_current, dtype=float).reshape(-1)
        rvir = np.asarray(self.virtual_impedance, dtype=float).reshape(-1)
        if rated.shape != rvir.shape:
            raise ConfigError("rated_current and virtual_impedance lengths differ")
        if np.any(rated <= 0) or np.any(rvir <= 0) or not self.v_ref > 0:
            raise ConfigError("ratings, virtual impedances and V_ref must be positive")
        object.__setattr__(self, "rated_current", rated)
        object.__setattr__(self, "virtual_impedance", rvir)
        droop = rvir * rated
        if np.ptp(droop) > 1e-9:
            warnings.warn(
                f"R_vir * I_rated is not uniform ({droop}); proportional sharing will be biased",
                stacklevel=2,
            )

    @property
    def n(self) -> int:
        return self.rated_current.size


@dataclass(frozen=True)
class NetworkModel:
    """Resistive network; ``lines`` are ``(bus_a, bus_b, ohm)``, ``loads`` are ``(bus, ohm)``."""

    n_converters: int
    n_buses: int
    lines: tuple
    loads: tuple

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple((int(a), int(b), float(r)) for a, b, r in self.lines))
        object.__setattr__(self, "loads", tuple((int(b), float(r)) for b, r in self.loads))
        if self.n_buses < self.n_converters:
            raise ConfigError("fewer buses than converters")
        for a, b, r in self.lines:
            if not (1 <= a <= self.n_buses and 1 <= b <= self.n_buses) or a == b:
                raise ConfigError(f"line ({a}, {b}) has invalid endpoints")
            if not r > 0:
                raise ConfigError(f"line ({a}, {b}) resistance must be positive")
        for b, r in self.loads:
            if not 1 <= b <= self.n_buses:
                raise ConfigError(f"load at bus {b} is outside 1..{self.n_buses}")
            if not r > 0:
                raise ConfigError(f"load at bus {b} resistance must be positive")
        if not self.loads:
            raise ConfigError("network has no load; currents are undefined")
        if not self._connected():
            raise ConfigError("network is not connected")

    def _connected(self) -> bool:
        nbr = [[] for _ in range(self.n_buses)]
        for a, b, _ in self.lines:
            nbr[a - 1].append(b - 1)
            nbr[b - 1].append(a - 1)
        seen = {0}
        queue = deque([0])
        while queue:
            k = queue.popleft()
            for m in nbr[k]:
                if m not in seen:
                    seen.add(m)
                    queue.append(m)
        return len(seen) == self.n_buses

    @classmethod
    def star(cls, n_converters, r_line=0.1, r_load=20.0) -> "NetworkModel":
        """Every converter bus tied by one line to a common load bus ``n+1``."""
        lines = [(i + 1, n_converters + 1, r_line) for i in range(n_converters)]
        return cls(n_converters, n_converters + 1, lines, [(n_converters + 1, r_load)])


def conductance_matrix(bank: ConverterBank, net: NetworkModel) -> np.ndarray:
    """Nodal conductance matrix including the virtual-impedance branches to the sources."""
    if bank.n != net.n_converters:
        raise ConfigError(f"{bank.n} converters in bank, {net.n_converters} in network")
    gmat = np.zeros((net.n_buses, net.n_buses))
    for a, b, r in net.lines:
        a, b = a - 1, b - 1
        gmat[a, a] += 1.0 / r
        gmat[b, b] += 1.0 / r
        gmat[a, b] -= 1.0 / r
        gmat[b, a] -= 1.0 / r
    for b, r in net.loads:
        gmat[b - 1, b - 1] += 1.0 / r
    idx = np.arange(bank.n)
    gmat[idx, idx] += 1.0 / bank.virtual_impedance
    return gmat


def solve_network(v_n, bank: ConverterBank, net: NetworkModel):
    """Bus voltages at the converters and converter output currents for source voltages ``v_n``.

    Returns ``(v, i_out)``.  Raises ConfigError if the conductance matrix is singular.
    """
    v_n = np.asarray(v_n, dtype=float)
    gmat = conductance_matrix(bank, net)
    rhs = np.zeros(net.n_buses)
    rhs[: bank.n] = v_n / bank.virtual_impedance
    try:
        bus_v = np.linalg.solve(gmat, rhs)
    except np.linalg.LinAlgError as exc:
        raise ConfigError("singular conductance matrix") from exc
    v = bus_v[: bank.n]
    i_out = (v_n - v) / bank.virtual_impedance
    return v, i_out


def bus_voltages(v_n, bank: ConverterBank, net: NetworkModel) -> np.ndarray:
    """All bus voltages (converters first, then load buses)."""
    rhs = np.zeros(net.n_buses)
    rhs[: bank.n] = np.asarray(v_n, dtype=float) / bank.virtual_impedance
    return np.linalg.solve(conductance_matrix(bank, net), rhs)


def kcl_residual(v_n, bank: ConverterBank, net: NetworkModel) -> np.ndarray:
    """Net current injection at each bus (A); zero for a consistent solution."""
    bus_v = bus_voltages(v_n, bank, net)
    rhs = np.zeros(net.n_buses)
    rhs[: bank.n] = np.asarray(v_n, dtype=float) / bank.virtual_impedance
    return conductance_matrix(bank, net) @ bus_v - rhs


def per_unit_currents(i_out, bank: ConverterBank) -> np.ndarray:
    return np.asarray(i_out, dtype=float) / bank.rated_current


def theta_dynamics(theta, gain_sums, g: CommGraph, theta_ref, delta) -> np.ndarray:
    """Per-node evaluation of the Theta consensus dynamics.

    dTheta_i/dt = K_i * (-(d_i + g_i) Theta_i + sum_j a_ij Theta_j + g_i Theta_ref) + delta_i
    """
    theta = np.asarray(theta, dtype=float)
    a = g.adjacency
    out = np.empty_like(theta)
    for i in range(theta.size):
        d_i = 0.0
        neigh = 0.0
        for j in range(theta.size):
            if a[i, j] != 0.0:
                d_i += a[i, j]
                neigh += a[i, j] * theta[j]
        g_i = g.pinning[i]
        out[i] = gain_sums[i] * (-(d_i + g_i) * theta[i] + neigh + g_i * theta_ref) + delta[i]
    return out


def theta_dynamics_global(theta, gain_sums, g: CommGraph, theta_ref, delta) -> np.ndarray:
    """Vectorized form: -diag(K) (L + G) (Theta - 1 Theta_ref) + delta."""
    pinned = build_matrices(g).pinned
    eps = np.asarray(theta, dtype=float) - theta_ref
    return -np.asarray(gain_sums) * (pinned @ eps) + np.asarray(delta)
