"""Closed-loop fixed-step simulation of converters, secondary control and attacks."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import controller as ctl
from .controller import AttackModel, EnvelopeViolation, ResilientGainState
from .graph import CommGraph, GraphError, build_matrices, directed_ring, has_leader_spanning_tree
from .plant import ConverterBank, NetworkModel, conductance_matrix, per_unit_currents

DIVERGENCE_FACTOR = 10.0


def rk4_step(f, t, x, dt):
    """One classical 4-stage Runge-Kutta step."""
    k1 = f(t, x)
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = f(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(frozen=True)
class ControllerConfig:
    """Secondary controller selection and tuning.

    ``sign`` multiplies the applied input; -1 gives a deliberately mis-signed
    controller for negative-control experiments.
    """

    kind: str
    gamma: int
    alpha: np.ndarray
    upsilon: np.ndarray
    rho: np.ndarray
    xi0: np.ndarray
    xi_hat0: np.ndarray
    static_gain: float = 4.0
    sign: float = 1.0

    def __post_init__(self):
        if self.kind not in ("resilient", "baseline"):
            raise ValueError(f"unknown controller kind {self.kind!r}")

    def gain_state(self, n) -> ResilientGainState:
        xi0 = np.broadcast_to(np.asarray(self.xi0, dtype=float), (n, self.gamma)).copy()
        return ResilientGainState(xi0, self.xi_hat0, self.alpha, self.upsilon, self.rho)


@dataclass(frozen=True)
class Scenario:
    graph: CommGraph
    bank: ConverterBank
    net: NetworkModel
    control: ControllerConfig
    attack: AttackModel
    t_end: float = 30.0
    dt: float = 1e-3
    record_stride: int = 10
    v_n0: np.ndarray | None = None
    name: str = "scenario"

    @property
    def n(self) -> int:
        return self.graph.n

    def initial_vn(self) -> np.ndarray:
        if self.v_n0 is None:
            return np.full(self.n, float(self.bank.v_ref))
        return np.broadcast_to(np.asarray(self.v_n0, dtype=float), (self.n,)).copy()

    def validate(self):
        """Raise on any violated precondition; returns per-node attack kappas."""
        if not (self.dt > 0 and self.t_end > 0 and int(self.record_stride) >= 1):
            raise ValueError("need dt > 0, t_end > 0 and record_stride >= 1")
        for label, k in (("converter bank", self.bank.n), ("network", self.net.n_converters),
                         ("attack model", self.attack.n)):
            if k != self.n:
                raise ValueError(f"{label} has {k} nodes, graph has {self.n}")
        if not has_leader_spanning_tree(self.graph):
            raise GraphError(
                "Assumption 2 violated: the leader does not root a spanning tree "
                "(some converters are unreachable from the pinned set)"
            )
        if self.control.kind == "resilient":
            gains = self.control.gain_state(self.n)
            gains.check_initial()
            if self.attack.gamma > self.control.gamma:
                raise EnvelopeViolation(
                    f"attack envelope order {self.attack.gamma} exceeds controller gamma {self.control.gamma}"
                )
        kappa = []
        for i in range(self.n):
            if self.attack.onset[i] >= self.t_end:
                if self.attack.degree(i) > self.attack.gamma:
                    raise EnvelopeViolation(f"node {i + 1}: attack degree exceeds gamma")
                kappa.append(0.0)
            else:
                kappa.append(ctl.verify_envelope(self.attack, i, self.t_end, self.dt))
        return np.array(kappa)


@dataclass
class Trace:
    """Uniformly sampled record of a run.  Arrays are ``(samples, n)`` unless noted.

    Plant traces carry bus voltages ``v`` and currents ``i_out``; reduced
    (Theta-space) traces store Theta in ``v_n`` and leave ``v``/``i_out``/``pu`` as None.
    """

    t: np.ndarray
    v_n: np.ndarray
    zeta: np.ndarray
    xi: np.ndarray  # (samples, n, gamma)
    xi_hat: np.ndarray
    gain_sum: np.ndarray
    u: np.ndarray
    delta: np.ndarray
    eps: np.ndarray
    scenario: Scenario
    kind: str = "plant"
    v: np.ndarray | None = None
    i_out: np.ndarray | None = None
    pu: np.ndarray | None = None
    diverged: bool = False
    diverged_at: float | None = None
    final_state: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def eps_norm(self) -> np.ndarray:
        return np.linalg.norm(self.eps, axis=1)

    @property
    def xi_tilde(self) -> np.ndarray:
        if self.xi.shape[2] == 0:
            return np.zeros_like(self.xi_hat)
        return self.xi[:, :, -1] - self.xi_hat

    def __len__(self):
        return self.t.size


class _Loop:
    """Right-hand side and sample recorder shared by the plant and reduced runs."""

    def __init__(self, s: Scenario, reduced=False, theta_ref=None):
        self.s = s
        self.n = s.n
        self.reduced = reduced
        self.theta_ref = theta_ref
        self.rvir = s.bank.virtual_impedance
        self.mats = build_matrices(s.graph)
        c = s.control
        self.resilient = c.kind == "resilient"
        self.gamma = c.gamma if self.resilient else 0
        if self.resilient:
            gs = c.gain_state(self.n)
            self.alpha, self.upsilon, self.rho = gs.alpha, gs.upsilon, gs.rho
            self.x0_gains = np.concatenate([gs.xi.reshape(-1), gs.xi_hat])
        else:
            self.x0_gains = np.zeros(0)
        if not reduced:
            # bus voltages are linear in the source voltages: v = transfer @ v_n
            gmat = conductance_matrix(s.bank, s.net)
            inject = np.zeros((s.net.n_buses, self.n))
            inject[np.arange(self.n), np.arange(self.n)] = 1.0 / self.rvir
            self.transfer = np.linalg.solve(gmat, inject)[: self.n]

    def initial(self):
        return np.concatenate([self.s.initial_vn(), self.x0_gains])

    def electrical(self, vn):
        v = self.transfer @ vn
        return v, (vn - v) / self.rvir

    def unpack(self, x):
        n, gam = self.n, self.gamma
        vn = x[:n]
        if not self.resilient:
            return vn, np.zeros((n, 0)), np.zeros(n)
        xi = x[n : n + n * gam].reshape(n, gam)
        return vn, xi, x[n + n * gam :]

    def evaluate(self, t, x):
        vn, xi, xi_hat = self.unpack(x)
        if self.reduced:
            v = i_out = None
            zeta = -(self.mats.pinned @ (vn - self.theta_ref))
        else:
            v, i_out = self.electrical(vn)
            zeta = ctl.neighborhood_errors(v, i_out, self.s.bank, self.s.graph)
        if self.resilient:
            u, dxi, dhat, gain_sum = ctl.resilient_rates(zeta, xi, xi_hat, self.alpha, self.upsilon, self.rho)
        else:
            gain_sum = np.full(self.n, float(self.s.control.static_gain))
            u = gain_sum * zeta
            dxi = dhat = np.zeros(0)
        delta = self.s.attack.values(t)
        return dict(v=v, i_out=i_out, zeta=zeta, u=u, dxi=dxi, dhat=dhat,
                    gain_sum=gain_sum, delta=delta, vn=vn, xi=xi, xi_hat=xi_hat)

    def rhs(self, t, x):
        e = self.evaluate(t, x)
        dvn = self.s.control.sign * e["u"] + e["delta"]
        return np.concatenate([dvn, e["dxi"].reshape(-1), e["dhat"]])

    def bad(self, x):
        if not np.all(np.isfinite(x)):
            return True
        vn = x[: self.n]
        limit = DIVERGENCE_FACTOR * self.s.bank.v_ref
        if self.reduced:
            return bool(np.any(np.abs(vn) > limit))
        v, _ = self.electrical(vn)
        return bool(np.any(np.abs(v) > limit))

    def record(self, t, x, rec):
        e = self.evaluate(t, x)
        rec["t"].append(t)
        for key in ("vn", "zeta", "xi", "xi_hat", "gain_sum", "u", "delta"):
            rec[key].append(np.array(e[key]))
        if self.reduced:
            rec["eps"].append(e["vn"] - self.theta_ref)
        else:
            rec["v"].append(e["v"])
            rec["i_out"].append(e["i_out"])
            rec["eps"].append(regulation_error_plant(e["v"], e["i_out"], self.s.bank, self.mats, self.s.graph))


def reference_theta(i_out, bank: ConverterBank, g: CommGraph, mats=None) -> np.ndarray:
    """Instantaneous reference vector for Theta.

    ``(L+G)^-1 G (V_ref + R_vir * I)``; equals ``1 * Theta_ref`` whenever the pinned
    converters carry a common ``R_vir * I`` (the proportional-sharing steady state),
    and makes ``zeta = -(L+G) eps`` hold exactly at every sample.
    """
    mats = mats or build_matrices(g)
    target = g.pinning * (bank.v_ref + bank.virtual_impedance * np.asarray(i_out))
    return np.linalg.solve(mats.pinned, target)


def regulation_error_plant(v, i_out, bank, mats, g) -> np.ndarray:
    theta = np.asarray(v) + bank.virtual_impedance * np.asarray(i_out)
    return theta - reference_theta(i_out, bank, g, mats)


def _integrate(loop: _Loop) -> Trace:
    s = loop.s
    steps = int(round(s.t_end / s.dt))
    stride = int(s.record_stride)
    keys = ("t", "vn", "zeta", "xi", "xi_hat", "gain_sum", "u", "delta", "eps", "v", "i_out")
    rec = {k: [] for k in keys}
    x = loop.initial()
    diverged_at = None
    with np.errstate(over="ignore", invalid="ignore"):
        loop.record(0.0, x, rec)
        for k in range(steps):
            t = k * s.dt
            x_next = rk4_step(loop.rhs, t, x, s.dt)
            if loop.bad(x_next):
                diverged_at = (k + 1) * s.dt
                break
            x = x_next
            if (k + 1) % stride == 0:
                loop.record((k + 1) * s.dt, x, rec)
    n = loop.n
    arr = {k: np.array(rec[k]) for k in keys if rec[k]}
    xi = arr["xi"] if loop.resilient else np.zeros((len(rec["t"]), n, 0))
    trace = Trace(
        t=arr["t"], v_n=arr["vn"], zeta=arr["zeta"], xi=xi, xi_hat=arr["xi_hat"],
        gain_sum=arr["gain_sum"], u=arr["u"], delta=arr["delta"], eps=arr["eps"],
        scenario=s, kind="reduced" if loop.reduced else "plant",
        diverged=diverged_at is not None, diverged_at=diverged_at, final_state=x,
    )
    if not loop.reduced:
        trace.v = arr["v"]
        trace.i_out = arr["i_out"]
        trace.pu = per_unit_currents(trace.i_out, s.bank)
    return trace


def run_scenario(s: Scenario) -> Trace:
    """Integrate the full plant + controller + attack loop with fixed-step RK4."""
    kappa = s.validate()
    trace = _integrate(_Loop(s))
    trace.meta["kappa"] = kappa
    return trace


def estimate_theta_ref(s: Scenario) -> float:
    """V_ref + mean R_vir*I over the final 10% of the attack-free window before onset."""
    active = np.any(s.attack.coeffs != 0, axis=1)
    onset = float(s.attack.onset[active].min()) if active.any() else s.t_end
    # no pre-attack window when attacks start at t=0: fall back to the full horizon
    horizon = min(onset, s.t_end) if onset > 0 else s.t_end
    quiet = replace(s, attack=AttackModel.none(s.n, s.attack.gamma), t_end=horizon)
    tr = _integrate(_Loop(quiet))
    tail = tr.t >= tr.t[-1] - 0.1 * horizon
    droop = s.bank.virtual_impedance * tr.i_out[tail]
    return float(s.bank.v_ref + droop.mean())


def run_reduced(s: Scenario, theta_ref=None) -> Trace:
    """Integrate the Theta-space consensus model with a fixed Theta_ref."""
    s.validate()
    if theta_ref is None:
        theta_ref = estimate_theta_ref(s)
    trace = _integrate(_Loop(s, reduced=True, theta_ref=float(theta_ref)))
    trace.meta["theta_ref"] = float(theta_ref)
    return trace


CASE_STUDY_ATTACK = np.array([[5.0, 0.0, 0.8], [5.0, 0.0, 0.7], [5.0, 0.0, 0.8], [5.0, 0.0, 0.5]])


def case_study_scenario(kind="resilient", attacks=True, **overrides) -> Scenario:
    """The four-converter low-voltage case study with the documented defaults."""
    n = 4
    bank = ConverterBank(rated_current=[6, 3, 3, 6], virtual_impedance=[2, 4, 4, 2], v_ref=48.0)
    control = ControllerConfig(
        kind=kind, gamma=2, alpha=np.full(n, 1.5), upsilon=np.ones(n), rho=np.ones(n),
        xi0=np.tile([1.0, 70.0], (n, 1)), xi_hat0=np.ones(n), static_gain=4.0,
    )
    attack = AttackModel(np.full(n, 5.0), CASE_STUDY_ATTACK, gamma=2) if attacks else AttackModel.none(n, 2)
    s = Scenario(
        graph=directed_ring(n, pinning=np.ones(n)),
        bank=bank,
        net=NetworkModel.star(n, r_line=0.1, r_load=20.0),
        control=control,
        attack=attack,
        name=f"paper_sec3_{'proposed' if kind == 'resilient' else 'baseline'}" + ("" if attacks else "_noattack"),
    )
    return replace(s, **overrides)
