"""``robustgate`` command-line front end.

Every command writes one directory holding ``config.json`` (the validated
configuration), ``report.json`` (the run record), ``field.csv``,
``history.csv`` and command-specific CSV files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (TradeoffConfig, fluence_tradeoff_sweep, grid_metrics, heatmap_grid, log10_distance,
                       mc_average_fidelity, noise_curvature, noise_grid_size, wna_average_fidelity)
from .config import ExperimentConfig, RunRecord, load_config
from .dynamics import ControlField, gate, fidelities
from .errors import OptimizationError, ValidationError
from .scp import nominal_optimize, scp_optimize
from .uncertainty import BoxUncertainty, NoiseModel, sample_grid

log = logging.getLogger("robustgate")

EXIT_OK, EXIT_CONFIG, EXIT_OPTIMIZATION, EXIT_IO = 0, 2, 3, 4

FIELD_HEADER = ["run", "k", "t_start", "t_end", "theta"]
HISTORY_HEADER = ["run", "stage", "iteration", "rho", "worst_fidelity", "accepted", "predicted"]
HEATMAP_HEADER = ["omega_x", "omega_z", "log10_D"]
TABLE_HEADER = ["gate", "N", "T", "log10_D_wc", "log10_D_avg", "fluence", "max_theta"]
TRADEOFF_HEADER = ["set", "gamma", "fluence", "log10_D_wc"]
NOISE_HEADER = ["tau_over_T", "sigma", "log10_D_wna", "log10_D_mc", "mc_stderr"]


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def _finite(v):
    v = float(v)
    return v if np.isfinite(v) else None


class Run:
    """Accumulates the rows and record of one command invocation."""

    def __init__(self, command: str, cfg: ExperimentConfig):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.fields: list = []
        self.history: list = []
        self.record = RunRecord(command, cfg.raw)
        self._t0 = time.perf_counter()

    def add_field(self, label: str, th: ControlField):
        edges = np.linspace(0.0, th.horizon, th.N + 1)
        self.fields += [(label, k, edges[k], edges[k + 1], v) for k, v in enumerate(th.values)]

    def add_history(self, label: str, stage: str, records):
        for r in records:
            self.history.append((label, stage, r.iteration, r.rho, r.worst_fidelity, r.accepted, r.predicted))

    def timed(self, name: str, fn, *args, **kw):
        t = time.perf_counter()
        out = fn(*args, **kw)
        self.record.timings[name] = self.record.timings.get(name, 0.0) + time.perf_counter() - t
        return out

    def write(self, extra: dict):
        self.out.mkdir(parents=True, exist_ok=True)
        paths = [
            write_csv(self.out / "field.csv", FIELD_HEADER, self.fields),
            write_csv(self.out / "history.csv", HISTORY_HEADER, self.history),
        ]
        for name, (header, rows) in extra.items():
            paths.append(write_csv(self.out / name, header, rows))
        (self.out / "config.json").write_text(_dump(self.cfg.raw), encoding="utf-8")
        self.record.history = [
            {"run": h[0], "stage": h[1], "iteration": h[2], "rho": h[3], "worst_fidelity": h[4],
             "accepted": bool(h[5]), "predicted": _finite(h[6])}
            for h in self.history
        ]
        self.record.timings["total"] = time.perf_counter() - self._t0
        self.record.artifacts = [str(p) for p in paths] + [str(self.out / "config.json"), str(self.out / "report.json")]
        (self.out / "report.json").write_text(self.record.to_json(), encoding="utf-8")


def _dump(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=False)


def _nominal(run: Run, label: str, W, N: int, T: float):
    cfg = run.cfg
    trace: list = []
    try:
        th = run.timed("nominal", nominal_optimize, W, cfg.omega_bar, N=N, T=T, target_fidelity=cfg.nominal_target,
                       max_iter=cfg.nominal_max_iter, seed=cfg.seed, trace=trace)
    finally:
        run.add_history(label, "nominal", trace)
    return th


def _robust(run: Run, label: str, W, N: int, T: float, box: BoxUncertainty):
    cfg = run.cfg
    th0 = _nominal(run, label, W, N, T)
    th, st = run.timed("scp", scp_optimize, th0, W, sample_grid(box, cfg.train_counts), cfg.constraints, cfg.scp)
    run.add_history(label, "scp", st.history)
    return th, st


# --------------------------------------------------------------------------
# commands


def cmd_nominal(cfg: ExperimentConfig) -> RunRecord:
    run = Run("nominal", cfg)
    W = gate(cfg.gate)
    th = _nominal(run, cfg.gate, W, cfg.N, cfg.T)
    run.add_field(cfg.gate, th)
    F = float(fidelities(th, [cfg.omega_bar], W)[0])
    run.record.report = {"gate": cfg.gate, "N": cfg.N, "T": cfg.T, "nominal_fidelity": F,
                         "log10_D_nominal": float(log10_distance(1 - F))}
    run.write({})
    return run.record


def cmd_robust(cfg: ExperimentConfig) -> RunRecord:
    """Nominal bootstrap, SCP on the training grid, then evaluation-grid metrics.

    With a ``batch`` list every entry is solved in turn and contributes one
    table row; the heatmap is written for the first entry.
    """
    run = Run("robust", cfg)
    box = cfg.box
    jobs = cfg.batch or [(cfg.gate, cfg.N, cfg.T)]
    table, reports, heat = [], [], []
    for i, (g, N, T) in enumerate(jobs):
        label = f"{g}_N{N}_T{T:g}"
        W = gate(g)
        th, st = _robust(run, label, W, N, T, box)
        run.add_field(label, th)
        rep = run.timed("metrics", grid_metrics, th, W, box, cfg.eval_counts)
        table.append((g, N, T, rep.log10_d_wc, rep.log10_d_avg, rep.fluence, rep.max_field))
        reports.append({"run": label, "gate": g, "N": N, "T": T, "stop_reason": st.stop_reason,
                        "iterations": st.iteration, "training_worst_fidelity": st.worst_fidelity, **rep.to_dict()})
        if i == 0:
            ranges = tuple(box.bounds)
            wx, wz, vals = heatmap_grid(th, W, ranges, cfg.heatmap_resolution)
            heat = [(x, z, vals[a, b]) for a, x in enumerate(wx) for b, z in enumerate(wz)]
    run.record.report = {"runs": reports}
    run.write({"heatmap.csv": (HEATMAP_HEADER, heat), "table.csv": (TABLE_HEADER, table)})
    return run.record


def cmd_tradeoff(cfg: ExperimentConfig) -> RunRecord:
    run = Run("tradeoff", cfg)
    W = gate(cfg.gate)
    sets = cfg.boxes or {"box": cfg.half_widths}
    tcfg = TradeoffConfig(scp=cfg.scp, stage_scp=cfg.stage_scp, train_counts=cfg.train_counts,
                          eval_counts=cfg.eval_counts, nominal_target=cfg.nominal_target, seed=cfg.seed,
                          constraints=cfg.constraints)
    rows, series = [], []
    for label, hw in sets.items():
        box = BoxUncertainty(cfg.omega_bar, hw)
        init = _nominal(run, label, W, cfg.N, cfg.T)
        runs: list = []
        pts = run.timed("sweep", fluence_tradeoff_sweep, W, cfg.T, cfg.N, box, tcfg, init=init, histories=runs)
        for name, st in runs:
            run.add_history(f"{label}/{name}", "scp", st.history)
        for p in pts:
            rows.append((label, p.gamma, p.fluence, p.log10_d_wc))
        run.add_field(f"{label}/last_passing", pts[-2].field if len(pts) > 1 else pts[-1].field)
        series.append({"set": label, "half_widths": list(hw), "points": len(pts),
                       "gamma": [_finite(p.gamma) for p in pts], "fluence": [p.fluence for p in pts],
                       "log10_D_wc": [p.log10_d_wc for p in pts]})
    run.record.report = {"series": series}
    run.write({"tradeoff.csv": (TRADEOFF_HEADER, rows)})
    return run.record


def cmd_noise(cfg: ExperimentConfig) -> RunRecord:
    """Average distance under filtered ``wz`` noise versus ``tau / T``.

    The field is the robust solution for the configured box (a zero-width box
    gives the nominal field).  Weak-noise and Monte Carlo averages share the
    same fine grid at every point.
    """
    run = Run("noise", cfg)
    W = gate(cfg.gate)
    box = cfg.box
    if max(box.half_widths) > 0:
        th, _ = _robust(run, cfg.gate, W, cfg.N, cfg.T, box)
    else:
        th = _nominal(run, cfg.gate, W, cfg.N, cfg.T)
    run.add_field(cfg.gate, th)
    wx, wz = cfg.omega_bar
    spec = cfg.noise
    curvature = {}
    rows = []
    for ratio in spec.tau_over_T:
        tau = ratio * cfg.T
        M = noise_grid_size(cfg.N, cfg.T, tau, spec.base_M, spec.max_M)
        if M not in curvature:
            curvature[M] = run.timed("curvature", noise_curvature, th, NoiseModel(wz, 0.0, tau, M, cfg.T, wx), W)
        for sigma in spec.sigmas:
            model = NoiseModel(wz, sigma, tau, M, cfg.T, wx)
            d_wna = run.timed("wna", wna_average_fidelity, th, model, W, curvature[M])
            d_mc, se = run.timed("mc", mc_average_fidelity, th, model, W, spec.mc_paths, cfg.seed)
            rows.append((ratio, sigma, float(log10_distance(d_wna)), float(log10_distance(d_mc)), se))
    D0 = 1.0 - float(fidelities(th, [cfg.omega_bar], W)[0])
    run.record.report = {"log10_D_nominal": float(log10_distance(D0)), "fluence": float(th.values @ th.values * th.h),
                         "points": len(rows)}
    run.write({"noise.csv": (NOISE_HEADER, rows)})
    return run.record


COMMANDS = {"nominal": cmd_nominal, "robust": cmd_robust, "tradeoff": cmd_tradeoff, "noise": cmd_noise}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robustgate", description="Robust one-qubit gate synthesis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        s = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0] if fn.__doc__ else None)
        s.add_argument("--config", type=Path, help="JSON experiment config")
        s.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--out", type=Path, help="output directory")
        s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="set a config field, dotted keys allowed; value parsed as JSON")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.override, args.seed, args.out)
        record = COMMANDS[args.command](cfg)
    except ValidationError as exc:
        print(f"robustgate: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OptimizationError as exc:
        print(f"robustgate: optimization failed: {exc}", file=sys.stderr)
        return EXIT_OPTIMIZATION
    except OSError as exc:
        print(f"robustgate: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(record.artifacts)} files to {cfg.output_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
