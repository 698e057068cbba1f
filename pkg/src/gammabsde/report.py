"""Output writers: delimited files, JSON, standalone SVG and matplotlib figures.

Everything here is deterministic: floats are emitted with shortest-roundtrip
repr, JSON keys are sorted, files are written atomically, and figures carry
no timestamps so repeated runs produce byte-identical artifacts.
"""

from __future__ import annotations

import json
import os
import tempfile

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_FIG_METADATA = {"Software": None}


def _fmt(v):
    if isinstance(v, (np.floating,)):
        v = float(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def atomic_write_bytes(path, data: bytes):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj):
    write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    write_text(path, "\n".join(lines) + "\n")


def write_field_csv(path, lattice, field, value_names):
    """One row per node: slice, offset coordinates, flattened values."""
    from .lattice import field_to_rows

    header, packed = field_to_rows(lattice, field, value_names)
    rows = []
    for i, nd, flat in packed:
        rows.append([i, *nd, *[float(x) for x in flat]])
    write_csv(path, header, rows)


# -- standalone SVG ----------------------------------------------------------


def render_svg(domain, paths=(), points=(), width=640) -> str:
    """Standalone SVG: domain outline plus polyline strokes and point marks.

    The viewBox is the domain bounding box; the vertical axis is flipped to
    the usual mathematical orientation.
    """
    lo, hi = domain.bounding_box()
    span = hi - lo
    pad = 0.05 * max(span[0], span[1])
    x0, y0 = lo[0] - pad, lo[1] - pad
    w, h = span[0] + 2 * pad, span[1] + 2 * pad
    flip = 2.0 * y0 + h

    def pt(p):
        return f"{_fmt(float(p[0]))},{_fmt(float(flip - p[1]))}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{int(width * h / w)}" viewBox="{_fmt(x0)} {_fmt(y0)} {_fmt(w)} {_fmt(h)}">'
    ]
    outline = " ".join(pt(v) for v in domain.vertices)
    parts.append(
        f'<polygon points="{outline}" fill="#eef2f7" stroke="#334" '
        f'stroke-width="{_fmt(0.004 * max(w, h))}"/>'
    )
    for path in paths:
        wps = " ".join(pt(p) for p in np.atleast_2d(path))
        parts.append(
            f'<polyline points="{wps}" fill="none" stroke="#c0392b" '
            f'stroke-width="{_fmt(0.006 * max(w, h))}"/>'
        )
    for p in points:
        parts.append(
            f'<circle cx="{_fmt(float(p[0]))}" cy="{_fmt(float(flip - p[1]))}" '
            f'r="{_fmt(0.008 * max(w, h))}" fill="#2155a3"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path, domain, paths=(), points=(), width=640):
    write_text(path, render_svg(domain, paths, points, width))


# -- matplotlib figures ------------------------------------------------------


def _save(fig, path):
    import io

    buf = io.BytesIO()
    fig.savefig(buf, format=os.path.splitext(path)[1].lstrip(".") or "png",
                dpi=120, metadata=_FIG_METADATA)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def draw_domain(ax, domain):
    verts = np.vstack([domain.vertices, domain.vertices[:1]])
    ax.fill(verts[:, 0], verts[:, 1], color="#eef2f7", zorder=0)
    ax.plot(verts[:, 0], verts[:, 1], color="#333344", lw=1.2, zorder=3)
    ax.set_aspect("equal")


def fig_geodesic(path, domain, geopaths, title=""):
    fig, ax = plt.subplots(figsize=(5, 5))
    draw_domain(ax, domain)
    for gp in geopaths:
        wps = np.atleast_2d(gp.waypoints if hasattr(gp, "waypoints") else gp)
        ax.plot(wps[:, 0], wps[:, 1], color="#c0392b", lw=1.6, zorder=4)
        ax.plot(wps[[0, -1], 0], wps[[0, -1], 1], "o", color="#2155a3", ms=4, zorder=5)
    ax.set_title(title)
    _save(fig, path)


def fig_solution(path, result, title=""):
    """Scatter of the solved field by time plus reflection-charge profile."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    draw_domain(axes[0], result.domain)
    slices = result.scheme_slices
    pts = []
    cols = []
    for i in slices:
        for _nd, v in result.Y.at_slice(i):
            pts.append(v)
            cols.append(i / max(slices[-1], 1))
    pts = np.asarray(pts)
    sc = axes[0].scatter(pts[:, 0], pts[:, 1], c=cols, cmap="viridis", s=4, zorder=4)
    fig.colorbar(sc, ax=axes[0], label="time fraction")
    axes[0].set_title("solution support")
    kmax = []
    for i in slices[:-1]:
        vals = [np.hypot(v[0], v[1]) for _nd, v in result.K_inc.at_slice(i)]
        kmax.append(max(vals) if vals else 0.0)
    axes[1].semilogy(slices[:-1], np.maximum(kmax, 1e-18), color="#c0392b")
    axes[1].set_xlabel("slice")
    axes[1].set_ylabel("max |K increment|")
    axes[1].set_title("reflection charge")
    fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def fig_picard(path, trace, title="Picard trace"):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(range(1, len(trace) + 1), np.maximum(trace, 1e-18), "o-",
                color="#2155a3")
    ax.set_xlabel("iteration")
    ax.set_ylabel("Z-field gap")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def fig_reports(path, reports, title="verification report"):
    fig, ax = plt.subplots(figsize=(7, 0.6 * max(len(reports), 2) + 1.5))
    names = [r.name for r in reports]
    margins = [r.margin if np.isfinite(r.margin) else 0.0 for r in reports]
    colors = ["#2e8b57" if r.passed else "#c0392b" for r in reports]
    ax.barh(range(len(reports)), margins, color=colors)
    ax.set_yticks(range(len(reports)))
    ax.set_yticklabels(names)
    ax.axvline(0.0, color="#333", lw=1)
    ax.set_xlabel("worst-case margin")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def fig_refinement(path, table, title="refinement gaps"):
    fig, ax = plt.subplots(figsize=(5, 4))
    ks = [b for _a, b, _g in table.gaps]
    gs = [max(g, 1e-18) for _a, _b, g in table.gaps]
    ax.semilogy(ks, gs, "o-", color="#2155a3")
    ax.set_xlabel("finer dyadic exponent")
    ax.set_ylabel("sup-node gap to previous level")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def reports_table(reports) -> str:
    """Fixed-width human-readable table of check outcomes."""
    rows = [("check", "status", "margin")]
    for r in reports:
        rows.append((r.name, "PASS" if r.passed else "FAIL", _fmt(float(r.margin))))
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    lines = []
    for idx, row in enumerate(rows):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
        if idx == 0:
            lines.append("-" * (sum(widths) + 4))
    return "\n".join(lines)
