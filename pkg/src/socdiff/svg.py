"""Small dependency-free SVG emitters for scenes, histograms and curves.

Coordinates are printed with fixed precision so identical inputs give
byte-identical files.
"""
from __future__ import annotations

from html import escape

import numpy as np

from .geometry import ARM, forward_kinematics

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _f(x: float) -> str:
    return f"{x:.2f}"


def _doc(width: int, height: int, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>"]) + "\n"


def _text(x, y, s, anchor="middle", size=11, extra="") -> str:
    return f'<text x="{_f(x)}" y="{_f(y)}" text-anchor="{anchor}" font-size="{size}"{extra}>{escape(str(s))}</text>'


def _polyline(pts, color, width=1.5, extra="") -> str:
    coords = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
    return f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'


def scene_svg(problem, robot, best=None, others=None, size: int = 480, title: str = "") -> str:
    """Obstacles, optional candidate trajectories (thin grey), the chosen one, start and goal."""
    b = problem.scene.bounds
    pad = 20
    scale = (size - 2 * pad) / max(b.hi[0] - b.lo[0], b.hi[1] - b.lo[1])

    def px(p):
        return pad + (p[0] - b.lo[0]) * scale, size - pad - (p[1] - b.lo[1]) * scale

    body = []
    x0, y0 = px(b.lo)
    x1, y1 = px(b.hi)
    body.append(f'<rect x="{_f(x0)}" y="{_f(y1)}" width="{_f(x1 - x0)}" height="{_f(y0 - y1)}" '
                f'fill="none" stroke="black"/>')
    for o in problem.scene.obstacles:
        ax, ay = px(o.lo)
        bx, by = px(o.hi)
        body.append(f'<rect x="{_f(ax)}" y="{_f(by)}" width="{_f(bx - ax)}" height="{_f(ay - by)}" '
                    f'fill="#888888" stroke="#444444"/>')

    def path_of(traj):
        pts = forward_kinematics(robot, np.asarray(traj, dtype=float))[:, -1]
        return [px(p) for p in pts]

    for traj in others if others is not None else ():
        body.append(_polyline(path_of(traj), "#bbbbbb", 0.7))
    if best is not None:
        best = np.asarray(best, dtype=float)
        if robot.kind == ARM:
            for q in best[:: max(1, len(best) // 8)]:
                body.append(_polyline([px(p) for p in forward_kinematics(robot, q)], "#9ecae1", 2.0))
        body.append(_polyline(path_of(best), PALETTE[0], 2.0))
    for q, color, label in ((problem.q_start, "#2ca02c", "start"), (problem.q_goal, "#d62728", "goal")):
        cx, cy = px(forward_kinematics(robot, np.asarray(q, dtype=float))[-1])
        body.append(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="5" fill="{color}"><title>{label}</title></circle>')
    if title:
        body.append(_text(size / 2, 14, title))
    return _doc(size, size, body)


def _axes(x0, y0, w, h, xlim, ylim, xlabel, ylabel, n_ticks=5) -> list[str]:
    out = [f'<rect x="{_f(x0)}" y="{_f(y0)}" width="{_f(w)}" height="{_f(h)}" fill="none" stroke="black"/>']
    for k in range(n_ticks + 1):
        xv = xlim[0] + (xlim[1] - xlim[0]) * k / n_ticks
        xx = x0 + w * k / n_ticks
        out.append(f'<line x1="{_f(xx)}" y1="{_f(y0 + h)}" x2="{_f(xx)}" y2="{_f(y0 + h + 4)}" stroke="black"/>')
        out.append(_text(xx, y0 + h + 15, f"{xv:g}"))
        yv = ylim[0] + (ylim[1] - ylim[0]) * k / n_ticks
        yy = y0 + h - h * k / n_ticks
        out.append(f'<line x1="{_f(x0 - 4)}" y1="{_f(yy)}" x2="{_f(x0)}" y2="{_f(yy)}" stroke="black"/>')
        out.append(_text(x0 - 6, yy + 4, f"{yv:.3g}", anchor="end"))
    out.append(_text(x0 + w / 2, y0 + h + 30, xlabel))
    out.append(_text(x0 - 40, y0 + h / 2, ylabel, extra=f' transform="rotate(-90 {_f(x0 - 40)} {_f(y0 + h / 2)})"'))
    return out


def histogram_svg(groups: dict[str, list], bins, title: str = "", xlabel: str = "trigger step t") -> str:
    """One panel per group, stacked vertically, sharing ``bins``."""
    bins = np.asarray(bins, dtype=float)
    w, ph, left, top = 420, 120, 60, 30
    height = top + len(groups) * (ph + 50)
    body = [_text((left + w + 20) / 2 + 10, 16, title)] if title else []
    counts = {k: np.histogram(np.asarray(v, dtype=float), bins)[0] for k, v in groups.items()}
    ymax = max([int(c.max()) for c in counts.values() if c.size] + [1])
    for gi, (name, c) in enumerate(counts.items()):
        y0 = top + gi * (ph + 50)
        body += _axes(left, y0, w, ph, (bins[0], bins[-1]), (0, ymax), xlabel if gi == len(groups) - 1 else "",
                      "count")
        span = bins[-1] - bins[0]
        for i, n in enumerate(c):
            if n == 0:
                continue
            bx = left + w * (bins[i] - bins[0]) / span
            bw = w * (bins[i + 1] - bins[i]) / span
            bh = ph * n / ymax
            body.append(f'<rect x="{_f(bx)}" y="{_f(y0 + ph - bh)}" width="{_f(bw)}" height="{_f(bh)}" '
                        f'fill="{PALETTE[gi % len(PALETTE)]}" fill-opacity="0.8" stroke="white" stroke-width="0.5"/>')
        body.append(_text(left + w - 4, y0 + 14, f"{name} (n={len(groups[name])})", anchor="end"))
    return _doc(left + w + 20, height, body)


def curves_svg(x, series: dict[str, list], title: str = "", xlabel: str = "t", ylabel: str = "",
               reverse_x: bool = True) -> str:
    """Line plot of several series over a shared x; by default x runs from T down to 1."""
    x = np.asarray(x, dtype=float)
    w, h, left, top = 460, 260, 60, 30
    ys = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    ys = ys[np.isfinite(ys)]
    lo, hi = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if hi <= lo:
        hi = lo + 1.0
    xlim = (x.max(), x.min()) if reverse_x else (x.min(), x.max())
    span = (xlim[1] - xlim[0]) or 1.0
    body = [_text(left + w / 2, 16, title)] if title else []
    body += _axes(left, top, w, h, xlim, (lo, hi), xlabel, ylabel)
    for i, (name, v) in enumerate(series.items()):
        v = np.asarray(v, dtype=float)
        pts = [(left + w * (xi - xlim[0]) / span, top + h - h * (yi - lo) / (hi - lo))
               for xi, yi in zip(x, v) if np.isfinite(yi)]
        color = PALETTE[i % len(PALETTE)]
        body.append(_polyline(pts, color, 1.2 if i else 0.8))
        body.append(f'<line x1="{_f(left + w - 110)}" y1="{_f(top + 14 + 14 * i)}" x2="{_f(left + w - 90)}" '
                    f'y2="{_f(top + 14 + 14 * i)}" stroke="{color}" stroke-width="2"/>')
        body.append(_text(left + w - 86, top + 18 + 14 * i, name, anchor="start"))
    return _doc(left + w + 20, top + h + 45, body)
