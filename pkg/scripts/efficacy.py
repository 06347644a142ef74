"""Guided vs unguided success on a suite (dynamic start, predicted-tau0 target).

    python scripts/efficacy.py SUITE CHECKPOINT [--K 64] [--limit N] [--workers W]
"""
import argparse
import time

from socdiff.bench import Cell, run_bench
from socdiff.denoiser import load_checkpoint
from socdiff.fileio import read_suite
from socdiff.planner import PREDICTED, PlannerConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("suite")
    ap.add_argument("checkpoint")
    ap.add_argument("--K", type=int, default=64)
    ap.add_argument("--limit", type=int)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=42)
    a = ap.parse_args()
    suite, model = read_suite(a.suite), load_checkpoint(a.checkpoint)
    cells = [Cell("dynamic", PREDICTED, True), Cell("dynamic", PREDICTED, False)]
    t0 = time.perf_counter()
    res = run_bench(suite, model, PlannerConfig(K=a.K), cells, workers=a.workers, limit=a.limit, run_seed=a.seed)
    guided, unguided = res.rate("dynamic"), res.rate("dynamic", guided=False)
    n = len(res.rows) // 2
    print(f"problems {n}  guided {guided:.1f}%  unguided {unguided:.1f}%  gap {guided - unguided:+.1f} pts  "
          f"({time.perf_counter() - t0:.0f} s)")
    for st, rows in sorted(_by_type(res.rows).items()):
        g = [r["success"] for r in rows if r["guided"]]
        u = [r["success"] for r in rows if not r["guided"]]
        print(f"  {st:<9} guided {100 * sum(g) / len(g):5.1f}%  unguided {100 * sum(u) / len(u):5.1f}%")


def _by_type(rows):
    out = {}
    for r in rows:
        out.setdefault(r["scene_type"], []).append(r)
    return out


if __name__ == "__main__":
    main()
