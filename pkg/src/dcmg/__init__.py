"""Distributed attack-resilient secondary control of DC microgrids."""
from .analysis import lyapunov_decrease_monitor, theoretical_zeta_bound, uub_metrics, xi_tilde_closed_form
from .controller import AttackModel, ResilientGainState, attack_value, verify_envelope
from .graph import CommGraph, build_matrices, condition_ratio, has_leader_spanning_tree
from .plant import ConverterBank, NetworkModel, per_unit_currents, solve_network
from .scenario import load_scenario
from .sim import Scenario, Trace, case_study_scenario, run_reduced, run_scenario

__version__ = "0.1.0"
