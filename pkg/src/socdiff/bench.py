"""Benchmark harness: the start-step x target x guidance ablation matrix over a suite.

Output files (all plain text, byte-stable for a given config and seed):

``results.csv``
    one row per (cell, problem); columns ``RESULT_COLUMNS``.
``summary.csv``
    one row per cell; columns ``SUMMARY_COLUMNS``.  ``success_rate`` is in
    percent of problems.
``table.txt``
    the summary as an aligned text table, plus the Table II / III views.
``traces/<scene_type>.csv``
    per-step trace (``planner.TRACE_FIELDS``) of the first problem of each
    scene type under the dynamic, guided, PredictedTau0 cell.
``trigger_hist.svg``, ``u_curve.svg``, ``ks.csv``
    trigger-step histograms per scene type, a U / smoothed-U curve, and
    pairwise two-sample KS tests between scene types.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy import stats

from .planner import NOISY, PREDICTED, TRACE_FIELDS, PlannerConfig, plan_many

STARTS = ("dynamic", "T/8", "T/4", "T/2", "T")
TARGETS = (PREDICTED, NOISY)
RESULT_COLUMNS = ("cell", "start", "target", "guided", "problem", "scene_type", "success", "best_cost",
                  "trigger_step", "peak_step", "n_valid")
SUMMARY_COLUMNS = ("cell", "start", "target", "guided", "n_problems", "n_success", "success_rate", "mean_cost",
                   "mean_trigger_step")
KS_ALPHA = 0.05


class BenchError(ValueError):
    pass


@dataclass(frozen=True)
class Cell:
    start: str
    target: str
    guided: bool

    def __post_init__(self):
        if self.start not in STARTS:
            raise BenchError(f"unknown start {self.start!r}; expected one of {STARTS}")
        if self.target not in TARGETS:
            raise BenchError(f"unknown target {self.target!r}; expected one of {TARGETS}")

    @property
    def name(self) -> str:
        return f"{self.start}/{self.target}/{'guided' if self.guided else 'unguided'}"

    @classmethod
    def parse(cls, name: str) -> "Cell":
        try:
            start_a, *rest = name.split("/")
            # "T/8" contains the separator itself
            if rest and rest[0].isdigit():
                start_a = f"{start_a}/{rest.pop(0)}"
            target, mode = rest
        except ValueError:
            raise BenchError(f"cannot parse cell name {name!r}; expected start/target/guided|unguided") from None
        if mode not in ("guided", "unguided"):
            raise BenchError(f"cell mode must be guided or unguided, got {mode!r}")
        return cls(start_a, target, mode == "guided")


def full_matrix() -> list[Cell]:
    return [Cell(s, t, g) for g in (True, False) for t in TARGETS for s in STARTS]


def parse_cells(text: str | None) -> list[Cell]:
    if text is None or text.strip() in ("", "all"):
        return full_matrix()
    cells = [Cell.parse(c.strip()) for c in text.split(",") if c.strip()]
    if len(set(cells)) != len(cells):
        raise BenchError("duplicate cells")
    return cells


def start_step(start: str, T: int) -> int | None:
    if start == "dynamic":
        return None
    div = {"T/8": 8, "T/4": 4, "T/2": 2, "T": 1}[start]
    return max(1, T // div)


def plan_seed(suite_seed: int, index: int, run_seed: int = 0) -> int:
    """Planner seed of problem ``index``; a function of the seeds and the index only, never of scheduling."""
    return int(np.random.SeedSequence([int(suite_seed), int(index), int(run_seed)]).generate_state(1)[0])


def cell_config(cell: Cell, base: PlannerConfig, T: int, seed: int) -> PlannerConfig:
    guidance = base.guidance if cell.guided else replace(base.guidance, w=0.0)
    return replace(base, guidance=guidance, guidance_target=cell.target,
                   fixed_start_step=start_step(cell.start, T), seed=seed)


@dataclass
class BenchResult:
    cells: list[Cell]
    rows: list[dict]
    traces: dict[str, list[dict]]

    def summary(self) -> list[dict]:
        out = []
        for cell in self.cells:
            rows = [r for r in self.rows if r["cell"] == cell.name]
            n = len(rows)
            n_ok = sum(r["success"] for r in rows)
            trig = [r["trigger_step"] for r in rows if r["trigger_step"] is not None]
            out.append({"cell": cell.name, "start": cell.start, "target": cell.target,
                        "guided": cell.guided, "n_problems": n, "n_success": n_ok,
                        "success_rate": 100.0 * n_ok / n if n else float("nan"),
                        "mean_cost": float(np.mean([r["best_cost"] for r in rows])) if n else float("nan"),
                        "mean_trigger_step": float(np.mean(trig)) if trig else float("nan")})
        return out

    def rate(self, start: str, target: str = PREDICTED, guided: bool = True) -> float:
        name = Cell(start, target, guided).name
        for s in self.summary():
            if s["cell"] == name:
                return s["success_rate"]
        raise KeyError(name)

    def trigger_steps_by_type(self) -> dict[str, list[int]]:
        """Detected trigger steps per scene type, from the dynamic cells (all share the same detector run)."""
        dyn = next((c for c in self.cells if c.start == "dynamic"), None)
        if dyn is None:
            return {}
        out: dict[str, list[int]] = {}
        for r in self.rows:
            if r["cell"] == dyn.name:
                out.setdefault(r["scene_type"], []).append(r["trigger_step"])
        return out


# -- worker side -------------------------------------------------------------

_WORK: dict = {}


def _init(suite, model, cfgs_base, cells, T, trace_for, run_seed):
    _WORK.update(suite=suite, model=model, base=cfgs_base, cells=cells, T=T, trace_for=trace_for,
                 run_seed=run_seed)


def _run_one(index: int):
    w = _WORK
    suite, cells = w["suite"], w["cells"]
    problem = suite.problems[index]
    seed = plan_seed(suite.seed, index, w["run_seed"])
    cfgs = [cell_config(c, w["base"], w["T"], seed) for c in cells]
    want_trace = index in w["trace_for"]
    results = plan_many(problem, suite.robot, w["model"], cfgs, trace=want_trace)
    rows = []
    for cell, res in zip(cells, results):
        rows.append({"cell": cell.name, "start": cell.start, "target": cell.target, "guided": cell.guided,
                     "problem": index, "scene_type": problem.scene.scene_type, "success": bool(res.success),
                     "best_cost": res.best_cost, "trigger_step": res.trigger_step,
                     "peak_step": res.smoothed_peak_step, "n_valid": int(res.validity.sum())})
    trace = None
    if want_trace:
        ref = next((i for i, c in enumerate(cells) if c.start == "dynamic" and c.guided), 0)
        trace = results[ref].trace
    return rows, trace


def trace_problems(suite) -> dict[int, str]:
    """Index of the first problem of each scene type."""
    out: dict[int, str] = {}
    seen = set()
    for i, p in enumerate(suite.problems):
        if p.scene.scene_type not in seen:
            seen.add(p.scene.scene_type)
            out[i] = p.scene.scene_type
    return out


def run_bench(suite, model, base: PlannerConfig, cells=None, workers: int = 1, limit: int | None = None,
              progress=None, run_seed: int = 0) -> BenchResult:
    cells = list(cells) if cells is not None else full_matrix()
    T = model.schedule.T
    indices = list(range(len(suite.problems)))
    if limit is not None:
        indices = indices[:limit]
    trace_for = trace_problems(suite)
    init_args = (suite, model.fast() if hasattr(model, "fast") else model, base, cells, T, set(trace_for), run_seed)
    outputs = []
    if workers <= 1:
        _init(*init_args)
        for k, i in enumerate(indices):
            outputs.append(_run_one(i))
            if progress:
                progress(k + 1, len(indices))
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init, initargs=init_args) as pool:
            for k, out in enumerate(pool.map(_run_one, indices)):
                outputs.append(out)
                if progress:
                    progress(k + 1, len(indices))
    rows = []
    traces = {}
    for i, (r, trace) in zip(indices, outputs):
        rows.extend(r)
        if trace is not None:
            traces[trace_for[i]] = trace
    # cell-major order makes per-cell blocks easy to read
    order = {c.name: k for k, c in enumerate(cells)}
    rows.sort(key=lambda r: (order[r["cell"]], r["problem"]))
    return BenchResult(cells, rows, traces)


# -- serialization -------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def read_results(path) -> list[dict]:
    """Parse ``results.csv`` back into typed rows."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise BenchError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for r in reader:
            rows.append({"cell": r["cell"], "start": r["start"], "target": r["target"],
                         "guided": r["guided"] == "1", "problem": int(r["problem"]),
                         "scene_type": r["scene_type"], "success": r["success"] == "1",
                         "best_cost": float(r["best_cost"]),
                         "trigger_step": int(r["trigger_step"]) if r["trigger_step"] else None,
                         "peak_step": int(r["peak_step"]) if r["peak_step"] else None,
                         "n_valid": int(r["n_valid"])})
    return rows


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [{k: (int(v) if k == "t" else v == "1" if k == "active" else float(v)) for k, v in r.items()}
                for r in reader]


def result_from_rows(rows, traces=None) -> BenchResult:
    names = list(dict.fromkeys(r["cell"] for r in rows))
    return BenchResult([Cell.parse(n) for n in names], rows, traces or {})


def format_table(result: BenchResult) -> str:
    summ = result.summary()
    head = f"{'cell':<34} {'n':>4} {'success %':>9} {'mean cost':>10} {'mean trigger':>12}"
    lines = [head, "-" * len(head)]
    for s in summ:
        lines.append(f"{s['cell']:<34} {s['n_problems']:>4} {s['success_rate']:>9.1f} "
                     f"{s['mean_cost']:>10.4f} {s['mean_trigger_step']:>12.1f}")
    by = {s["cell"]: s for s in summ}

    def get(start, target, guided=True):
        s = by.get(Cell(start, target, guided).name)
        return f"{s['success_rate']:.1f}" if s else "-"

    lines += ["", "Guidance start (success %, guided)",
              f"{'target':<15}" + "".join(f"{st:>9}" for st in STARTS)]
    for tg in TARGETS:
        lines.append(f"{tg:<15}" + "".join(f"{get(st, tg):>9}" for st in STARTS))
    lines += ["", "Guidance target (success %, guided, dynamic start)"]
    for tg in TARGETS:
        lines.append(f"{tg:<15}{get('dynamic', tg):>9}")
    lines.append(f"{'unguided':<15}{get('dynamic', PREDICTED, False):>9}")
    return "\n".join(lines) + "\n"


def ks_table(groups: dict[str, list]) -> list[dict]:
    """Pairwise two-sample KS tests with the asymptotic critical value at ``KS_ALPHA``."""
    c_alpha = math.sqrt(-0.5 * math.log(KS_ALPHA / 2))
    out = []
    for a, b in combinations(sorted(groups), 2):
        xa, xb = np.asarray(groups[a], float), np.asarray(groups[b], float)
        res = stats.ks_2samp(xa, xb)
        n, m = len(xa), len(xb)
        crit = c_alpha * math.sqrt((n + m) / (n * m))
        out.append({"type_a": a, "type_b": b, "n_a": n, "n_b": m, "statistic": float(res.statistic),
                    "critical": crit, "p_value": float(res.pvalue), "differ": bool(res.statistic > crit)})
    return out


KS_COLUMNS = ("type_a", "type_b", "n_a", "n_b", "statistic", "critical", "p_value", "differ")


def write_plots(result: BenchResult, out_dir, T: int) -> list[Path]:
    from .svg import curves_svg, histogram_svg

    out_dir = Path(out_dir)
    written = []
    groups = result.trigger_steps_by_type()
    if groups:
        bins = np.linspace(0, T, 17)
        p = out_dir / "trigger_hist.svg"
        p.write_text(histogram_svg(groups, bins, "Guidance trigger step by scene type"))
        written.append(p)
        p = out_dir / "ks.csv"
        p.write_text(to_csv(ks_table(groups), KS_COLUMNS))
        written.append(p)
    if result.traces:
        name = sorted(result.traces)[0]
        tr = result.traces[name]
        p = out_dir / "u_curve.svg"
        p.write_text(curves_svg([r["t"] for r in tr], {"U_t": [r["U"] for r in tr],
                                                     "smoothed U_t": [r["U_smooth"] for r in tr]},
                                f"Weight uniformity, {name}", "t", "U"))
        written.append(p)
        p = out_dir / "u_curves_by_type.svg"
        p.write_text(curves_svg([r["t"] for r in tr], {k: [r["U_smooth"] for r in v]
                                                     for k, v in sorted(result.traces.items())},
                                "Smoothed uniformity by scene type", "t", "smoothed U"))
        written.append(p)
    return written


def write_outputs(result: BenchResult, out_dir, T: int, plots: bool = True) -> list[Path]:
    out_dir = Path(out_dir)
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    files = {"results.csv": to_csv(result.rows, RESULT_COLUMNS),
             "summary.csv": to_csv(result.summary(), SUMMARY_COLUMNS),
             "table.txt": format_table(result)}
    written = []
    for name, text in files.items():
        (out_dir / name).write_text(text)
        written.append(out_dir / name)
    for scene_type, tr in sorted(result.traces.items()):
        p = out_dir / "traces" / f"{scene_type}.csv"
        p.write_text(to_csv(tr, TRACE_FIELDS))
        written.append(p)
    return written + (write_plots(result, out_dir, T) if plots else [])
