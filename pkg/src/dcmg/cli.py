"""Command-line front end: ``dcmg run | compare | check``.

Exit codes: 0 settled, 1 bounded but outside the settling band, 2 diverged,
3 validation failure, 4 parse failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analysis
from .controller import EnvelopeViolation, verify_envelope
from .graph import GraphError, condition_ratio, has_leader_spanning_tree
from .plant import ConfigError
from .scenario import ScenarioParseError, build_scenario, load_config, locate, resolved_config
from .sim import Scenario, Trace, run_scenario

log = logging.getLogger("dcmg")

EXIT_SETTLED, EXIT_UNSETTLED, EXIT_DIVERGED, EXIT_INVALID, EXIT_PARSE = 0, 1, 2, 3, 4
TRACE_SCHEMA = "dcmg-trace/1"
REPORT_SCHEMA = "dcmg-report/1"
MANIFEST_SCHEMA = "dcmg-manifest/1"
VALIDATION_ERRORS = (GraphError, ConfigError, EnvelopeViolation, ValueError)


@dataclass
class RunManifest:
    scenario: str
    resolved: dict
    out_dir: str
    files: list = field(default_factory=list)
    status: int = EXIT_SETTLED

    def write(self):
        path = Path(self.out_dir) / "manifest.json"
        self.files.append(path.name)
        payload = {"schema": MANIFEST_SCHEMA, "scenario": self.scenario, "out_dir": self.out_dir,
                   "status": self.status, "files": self.files, "resolved": self.resolved}
        path.write_text(json.dumps(payload, indent=2, default=_jsonable) + "\n")
        return path


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(type(x))


def trace_columns(n):
    groups = ("V", "I", "Vn", "zeta", "xisum", "delta", "pu")
    return ["t"] + [f"{g}_{i + 1}" for g in groups for i in range(n)] + ["eps_norm"]


def write_trace_csv(trace: Trace, path):
    n = trace.scenario.n
    block = np.column_stack([trace.t, trace.v, trace.i_out, trace.v_n, trace.zeta,
                             trace.gain_sum, trace.delta, trace.pu, trace.eps_norm])
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {TRACE_SCHEMA}\n")
        w = csv.writer(fh)
        w.writerow(trace_columns(n))
        for row in block:
            w.writerow([format(x, ".12g") for x in row])


def write_report(path, sections):
    """Key-value report; ``sections`` maps a section name to an ordered dict of values."""
    lines = [f"schema = {REPORT_SCHEMA}"]
    for name, values in sections.items():
        lines.append(f"[{name}]")
        for k, v in values.items():
            if isinstance(v, float):
                v = format(v, ".6g")
            elif isinstance(v, (list, tuple, np.ndarray)):
                v = ", ".join(format(float(x), ".6g") for x in v)
            lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_charts(trace: Trace, out_dir, prefix=""):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "dcmg"
    names = []
    for key, label, fname in ((trace.v, "Voltage (V)", "voltage.svg"),
                              (trace.i_out, "Current (A)", "current.svg")):
        fig, ax = plt.subplots(figsize=(7, 3.5))
        for i in range(trace.scenario.n):
            ax.plot(trace.t, key[:, i], lw=1.2, label=f"converter {i + 1}")
        ax.set_xlabel("Time (s)")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8, ncol=2)
        fig.tight_layout()
        name = f"{prefix}{fname}"
        fig.savefig(Path(out_dir) / name, format="svg", metadata={"Date": None})
        plt.close(fig)
        names.append(name)
    return names


def status_code(report: analysis.UubReport) -> int:
    if report.diverged:
        return EXIT_DIVERGED
    return EXIT_SETTLED if report.settled else EXIT_UNSETTLED


STATUS_TEXT = {EXIT_SETTLED: "settled", EXIT_UNSETTLED: "unsettled", EXIT_DIVERGED: "diverged"}


def _summary(trace: Trace, report: analysis.UubReport) -> dict:
    out = {"controller": trace.scenario.control.kind, "status": STATUS_TEXT[status_code(report)]}
    out.update(report.as_dict())
    out["trace_diverged_at"] = "none" if trace.diverged_at is None else trace.diverged_at
    out["samples"] = len(trace)
    return out


def _apply_overrides(s: Scenario, args) -> Scenario:
    if getattr(args, "dt", None):
        s = replace(s, dt=args.dt)
    if getattr(args, "t_end", None):
        s = replace(s, t_end=args.t_end)
    return s


def _load(path, args=None):
    raw = load_config(path)
    s = build_scenario(raw)
    if args is not None:
        s = _apply_overrides(s, args)
    resolved = resolved_config(raw)
    resolved["sim"].update(t_end=s.t_end, dt=s.dt)
    s.validate()
    return s, resolved


def _simulate(s: Scenario, out_dir: Path, prefix=""):
    trace = run_scenario(s)
    report = analysis.uub_metrics(trace)
    files = [f"{prefix}trace.csv"]
    write_trace_csv(trace, out_dir / files[0])
    files += write_charts(trace, out_dir, prefix)
    return trace, report, files


def cmd_run(scenario_file, out_dir, args=None) -> RunManifest:
    s, resolved = _load(scenario_file, args)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace, report, files = _simulate(s, out)
    write_report(out / "report.txt", {"run": {"scenario": s.name, **_summary(trace, report)}})
    m = RunManifest(str(locate(scenario_file)), resolved, str(out), files + ["report.txt"], status_code(report))
    m.write()
    print(f"{s.name}: {STATUS_TEXT[m.status]} (max |V - V_ref| = {report.voltage_deviation:.4g} V, "
          f"pu spread = {report.pu_spread:.4g}) -> {out}")
    return m


def cmd_compare(scenario_file, out_dir, args=None) -> RunManifest:
    s, resolved = _load(scenario_file, args)
    variants = {
        "proposed": replace(s, control=replace(s.control, kind="resilient")),
        "baseline": replace(s, control=replace(s.control, kind="baseline")),
    }
    for v in variants.values():
        v.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files, sections, reports = [], {}, {}
    for label, variant in variants.items():
        trace, report, f = _simulate(variant, out, prefix=f"{label}_")
        files += f
        reports[label] = report
        sections[label] = _summary(trace, report)
    p, b = reports["proposed"], reports["baseline"]
    sections["delta"] = {
        "proposed_status": sections["proposed"]["status"],
        "baseline_status": sections["baseline"]["status"],
        "bound_ratio_baseline_over_proposed": b.ultimate_bound_estimate / max(p.ultimate_bound_estimate, 1e-300),
        "voltage_deviation_difference": b.voltage_deviation - p.voltage_deviation,
    }
    write_report(out / "compare_report.txt", sections)
    m = RunManifest(str(locate(scenario_file)), resolved, str(out), files + ["compare_report.txt"], status_code(p))
    m.write()
    print(f"{s.name}: proposed {sections['proposed']['status']}, baseline {sections['baseline']['status']} -> {out}")
    return m


def cmd_check(scenario_file, eta=None) -> dict:
    raw = load_config(scenario_file)
    s = build_scenario(raw)
    tree = has_leader_spanning_tree(s.graph)
    info = {"scenario": s.name, "spanning_tree": tree}
    if not tree:
        info["diagnostic"] = "Assumption 2 violated: leader does not root a spanning tree"
        return info
    info["beta"] = condition_ratio(s.graph)
    kappa = np.array([verify_envelope(s.attack, i, s.t_end, s.dt) if s.attack.onset[i] < s.t_end else 0.0
                      for i in range(s.n)])
    info["kappa"] = kappa
    info["gamma"] = s.attack.gamma
    c = s.control
    if c.kind == "resilient":
        s.validate()
        if eta is None:
            pre = replace(s, t_end=min(s.t_end, 10.0))
            eta = analysis.estimate_eta(run_scenario(pre))
            info["eta_source"] = "pre-run"
        else:
            info["eta_source"] = "user"
        info["eta"] = float(eta)
        info["zeta_bound"] = analysis.theoretical_zeta_bound(c.alpha, c.upsilon, c.gamma, kappa, eta, info["beta"])
    return info


def build_parser():
    p = argparse.ArgumentParser(prog="dcmg", description="Attack-resilient DC microgrid secondary control simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="simulate one scenario")
    run.add_argument("scenario", help="scenario file or bundled scenario name")
    run.add_argument("--out", required=True)
    run.add_argument("--dt", type=float)
    run.add_argument("--t-end", type=float)
    run.add_argument("--seedless", action="store_true", help="accepted for compatibility; runs are always deterministic")
    cmp_ = sub.add_parser("compare", help="run the scenario under the proposed and baseline controllers")
    cmp_.add_argument("scenario")
    cmp_.add_argument("--out", required=True)
    cmp_.add_argument("--dt", type=float)
    cmp_.add_argument("--t-end", type=float)
    chk = sub.add_parser("check", help="validate a scenario and print the stability quantities")
    chk.add_argument("scenario")
    chk.add_argument("--eta", type=float)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args.scenario, args.out, args).status
        if args.command == "compare":
            return cmd_compare(args.scenario, args.out, args).status
        info = cmd_check(args.scenario, args.eta)
        for k, v in info.items():
            if isinstance(v, np.ndarray):
                v = ", ".join(format(x, ".6g") for x in v)
            elif isinstance(v, float):
                v = format(v, ".6g")
            print(f"{k} = {v}")
        return EXIT_SETTLED if info["spanning_tree"] else EXIT_INVALID
    except ScenarioParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except GraphError as exc:
        print(f"validation error (graph): {exc}", file=sys.stderr)
        return EXIT_INVALID
    except EnvelopeViolation as exc:
        print(f"validation error (attack envelope): {exc}", file=sys.stderr)
        return EXIT_INVALID
    except VALIDATION_ERRORS as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
