"""Minimal deterministic SVG writers (no timestamps, fixed number formatting)."""

from pathlib import Path

import numpy as np


def _f(v):
    return f"{v:.3f}".rstrip("0").rstrip(".")


def _diverging(v):
    """Blue (+1) - white (0) - beige/red (-1)."""
    if not np.isfinite(v):
        return "#bbbbbb"
    v = max(-1.0, min(1.0, float(v)))
    if v >= 0:
        r = int(round(255 - v * (255 - 33)))
        g = int(round(255 - v * (255 - 70)))
        b = int(round(255 - v * (255 - 150)))
    else:
        t = -v
        r = int(round(255 - t * (255 - 230)))
        g = int(round(255 - t * (255 - 190)))
        b = int(round(255 - t * (255 - 120)))
    return f"#{r:02x}{g:02x}{b:02x}"


def _sequential(t):
    """0 -> dark navy, 1 -> bright yellow."""
    if not np.isfinite(t):
        return "#000000"
    t = max(0.0, min(1.0, float(t)))
    r = int(round(20 + t * (250 - 20)))
    g = int(round(20 + t * (230 - 20)))
    b = int(round(80 + t * (40 - 80)))
    return f"#{r:02x}{g:02x}{b:02x}"


def _doc(width, height, body, title=""):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
            f'viewBox="0 0 {_f(width)} {_f(height)}">\n')
    if title:
        head += f'<text x="{_f(width / 2)}" y="16" text-anchor="middle" font-size="13" font-family="sans-serif">{title}</text>\n'
    return head + "".join(body) + "</svg>\n"


def write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def heatmap_svg(values, title="", cell=None, labels=None, max_cells=256) -> str:
    """Square matrix in [-1, 1] on a diverging scale.

    Matrices larger than ``max_cells`` are drawn from evenly spaced rows/columns.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] > max_cells:
        keep = np.unique(np.linspace(0, values.shape[0] - 1, max_cells).round().astype(int))
        values = values[np.ix_(keep, keep)]
    n = values.shape[0]
    cell = cell or max(2.0, min(16.0, 480.0 / max(n, 1)))
    margin, top = 30.0, 26.0
    size = n * cell
    body = []
    for i in range(n):
        for j in range(n):
            body.append(f'<rect x="{_f(margin + j * cell)}" y="{_f(top + i * cell)}" width="{_f(cell)}" '
                        f'height="{_f(cell)}" fill="{_diverging(values[i, j])}"/>\n')
    # color bar
    bx = margin + size + 12
    for k in range(21):
        v = 1.0 - k / 10.0
        body.append(f'<rect x="{_f(bx)}" y="{_f(top + k * size / 21)}" width="12" height="{_f(size / 21 + 0.5)}" '
                    f'fill="{_diverging(v)}"/>\n')
    body.append(f'<text x="{_f(bx + 16)}" y="{_f(top + 8)}" font-size="10" font-family="sans-serif">1</text>\n')
    body.append(f'<text x="{_f(bx + 16)}" y="{_f(top + size)}" font-size="10" font-family="sans-serif">-1</text>\n')
    return _doc(bx + 40, top + size + margin, body, title)


def feature_scatter_svg(theta, amplitude, static=None, trajectories=None, title="") -> str:
    """(theta, A) scatter: active neurons red, static grey, trajectories blue."""
    theta = np.asarray(theta, dtype=np.float64)
    amplitude = np.asarray(amplitude, dtype=np.float64)
    static = np.zeros(theta.size, bool) if static is None else np.asarray(static, bool)
    w, h, left, top, bottom = 420.0, 320.0, 50.0, 26.0, 30.0
    amax = float(amplitude.max()) if amplitude.size else 1.0
    if trajectories is not None:
        amax = max(amax, float(np.max(trajectories[1])) if np.size(trajectories[1]) else 0.0)
    amax = amax if amax > 0 else 1.0

    def px(t):
        return left + (t + np.pi) / (2 * np.pi) * (w - left - 10)

    def py(a):
        return top + (1.0 - a / amax) * (h - top - bottom)

    body = [f'<rect x="{_f(left)}" y="{_f(top)}" width="{_f(w - left - 10)}" height="{_f(h - top - bottom)}" '
            f'fill="none" stroke="#444"/>\n']
    if trajectories is not None:
        th_traj, a_traj = trajectories  # (checkpoints, neurons)
        for k in range(th_traj.shape[1]):
            if static[k]:
                continue
            pts = " ".join(f"{_f(px(t))},{_f(py(a))}" for t, a in zip(th_traj[:, k], a_traj[:, k]))
            body.append(f'<polyline points="{pts}" fill="none" stroke="#3060d0" stroke-width="0.7"/>\n')
    for t, a, s in zip(theta, amplitude, static):
        color = "#999999" if s else "#d02020"
        body.append(f'<circle cx="{_f(px(t))}" cy="{_f(py(a))}" r="2.5" fill="{color}"/>\n')
    body.append(f'<text x="{_f(w / 2)}" y="{_f(h - 8)}" text-anchor="middle" font-size="11" '
                f'font-family="sans-serif">theta (-pi .. pi)</text>\n')
    body.append(f'<text x="12" y="{_f(top + 10)}" font-size="10" font-family="sans-serif">{amax:.2e}</text>\n')
    return _doc(w, h, body, title)


def phase_diagram_svg(cells, gamma_range=(0.0, 4.0), gamma_prime_range=(-2.0, 3.0), title="") -> str:
    """Cells colored by verdict with the boundary lines gamma=1 and gamma'=gamma-1.

    ``cells``: iterable of (gamma, gamma_prime, verdict).
    """
    colors = {"ConsistentLinear": "#4a7bd0", "ConsistentCondensed": "#e07b28", "Inconclusive": "#aaaaaa"}
    w, h, left, top, bottom = 420.0, 380.0, 50.0, 26.0, 40.0
    g0, g1 = gamma_range
    p0, p1 = gamma_prime_range

    def px(g):
        return left + (g - g0) / (g1 - g0) * (w - left - 10)

    def py(p):
        return top + (1.0 - (p - p0) / (p1 - p0)) * (h - top - bottom)

    body = [f'<rect x="{_f(left)}" y="{_f(top)}" width="{_f(w - left - 10)}" height="{_f(h - top - bottom)}" '
            f'fill="none" stroke="#444"/>\n']
    # theorem boundaries: gamma = 1 (for gamma' <= 0) and gamma' = gamma - 1 (for gamma >= 1)
    body.append(f'<line x1="{_f(px(1))}" y1="{_f(py(p0))}" x2="{_f(px(1))}" y2="{_f(py(0))}" '
                f'stroke="#000" stroke-dasharray="4 3"/>\n')
    body.append(f'<line x1="{_f(px(1))}" y1="{_f(py(0))}" x2="{_f(px(g1))}" y2="{_f(py(g1 - 1))}" '
                f'stroke="#000" stroke-dasharray="4 3"/>\n')
    for g, p, verdict in cells:
        body.append(f'<rect x="{_f(px(g) - 9)}" y="{_f(py(p) - 9)}" width="18" height="18" '
                    f'fill="{colors.get(verdict, "#aaaaaa")}" stroke="#222"/>\n')
    body.append(f'<text x="{_f(w / 2)}" y="{_f(h - 10)}" text-anchor="middle" font-size="11" '
                f'font-family="sans-serif">gamma</text>\n')
    body.append(f'<text x="12" y="{_f(h / 2)}" font-size="11" font-family="sans-serif">gamma\'</text>\n')
    return _doc(w, h, body, title)


def loss_histogram_svg(table, widths, bin_edges, title="") -> str:
    """Rows = widths, columns = log-spaced loss bins; color = log10 frequency."""
    table = np.asarray(table, dtype=np.float64)
    nrow, ncol = table.shape
    cw, ch, left, top = 8.0, 28.0, 60.0, 26.0
    logf = np.full(table.shape, np.nan)
    pos = table > 0
    logf[pos] = np.log10(table[pos])
    lo = float(np.nanmin(logf)) if pos.any() else -1.0
    hi = float(np.nanmax(logf)) if pos.any() else 0.0
    span = hi - lo if hi > lo else 1.0
    body = []
    for i in range(nrow):
        body.append(f'<text x="4" y="{_f(top + i * ch + ch / 2 + 4)}" font-size="10" '
                    f'font-family="sans-serif">m={widths[i]}</text>\n')
        for j in range(ncol):
            t = (logf[i, j] - lo) / span if pos[i, j] else np.nan
            body.append(f'<rect x="{_f(left + j * cw)}" y="{_f(top + i * ch)}" width="{_f(cw)}" '
                        f'height="{_f(ch)}" fill="{_sequential(t)}"/>\n')
    y = top + nrow * ch + 14
    body.append(f'<text x="{_f(left)}" y="{_f(y)}" font-size="10" font-family="sans-serif">'
                f'{bin_edges[0]:.1e}</text>\n')
    body.append(f'<text x="{_f(left + ncol * cw)}" y="{_f(y)}" text-anchor="end" font-size="10" '
                f'font-family="sans-serif">{bin_edges[-1]:.1e}</text>\n')
    return _doc(left + ncol * cw + 10, y + 16, body, title)


def line_plot_svg(series, title="", log_y=False, xlabel="", ylabel="") -> str:
    """``series``: list of (label, xs, ys)."""
    palette = ["#3060d0", "#e07b28", "#2a9d4a", "#b03060", "#555555"]
    w, h, left, top, bottom = 440.0, 300.0, 60.0, 26.0, 36.0
    xs_all = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.array([0.0, 1.0])
    ys_all = np.concatenate([np.asarray(s[2], float) for s in series]) if series else np.array([0.0, 1.0])
    if log_y:
        ys_all = np.log10(np.clip(ys_all, 1e-300, None))
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = float(ys_all.min()), float(ys_all.max())
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1
    body = [f'<rect x="{_f(left)}" y="{_f(top)}" width="{_f(w - left - 10)}" height="{_f(h - top - bottom)}" '
            f'fill="none" stroke="#444"/>\n']
    for idx, (label, xs, ys) in enumerate(series):
        ys = np.asarray(ys, float)
        if log_y:
            ys = np.log10(np.clip(ys, 1e-300, None))
        pts = " ".join(
            f"{_f(left + (x - x0) / (x1 - x0) * (w - left - 10))},{_f(top + (1 - (y - y0) / (y1 - y0)) * (h - top - bottom))}"
            for x, y in zip(xs, ys))
        color = palette[idx % len(palette)]
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.2"/>\n')
        body.append(f'<text x="{_f(w - 14)}" y="{_f(top + 14 + 13 * idx)}" text-anchor="end" font-size="10" '
                    f'fill="{color}" font-family="sans-serif">{label}</text>\n')
    body.append(f'<text x="{_f(w / 2)}" y="{_f(h - 8)}" text-anchor="middle" font-size="11" '
                f'font-family="sans-serif">{xlabel}</text>\n')
    body.append(f'<text x="6" y="{_f(top + 10)}" font-size="10" font-family="sans-serif">'
                f'{ylabel}{" (log10)" if log_y else ""}</text>\n')
    return _doc(w, h, body, title)
