"""Persistence and rendering: checkpoint files, CSV exports, SVG plots.

The checkpoint container is a simple versioned binary: a magic tag,
format version, one deterministic JSON header (sorted keys) describing
metadata and array placement, then the raw little-endian float64 payload
guarded by a CRC. Save -> load -> save is byte-identical, which is what
makes "resume equals uninterrupted run" checkable at the file level.

Plots are written as standalone SVG so outputs stay diffable and tests
can parse them; no plotting library is involved.
"""

from __future__ import annotations

import csv
import io
import json
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Batch, Checkpoint
from .errors import (
    CheckpointCorruptError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
)
from .policy import FlatParams, layout_from_jsonable, layout_to_jsonable

MAGIC = b"ALABCKPT"
FORMAT_VERSION = 1


# -- checkpoint container -------------------------------------------------


def _checkpoint_arrays(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    return [
        ("params", ckpt.params.data),
        ("adam_m", ckpt.adam_m),
        ("adam_v", ckpt.adam_v),
        ("frozen.observations", ckpt.frozen.observations),
        ("frozen.actions", ckpt.frozen.actions),
        ("frozen.old_log_probs", ckpt.frozen.old_log_probs),
        ("frozen.advantages", ckpt.frozen.advantages),
        ("frozen.returns", ckpt.frozen.returns),
        ("frozen.old_values", ckpt.frozen.old_values),
    ]


def save_checkpoint(ckpt: Checkpoint, path: Path) -> Path:
    """Write the versioned binary container; returns the path."""
    path = Path(path)
    arrays = _checkpoint_arrays(ckpt)
    placement = []
    offset = 0
    chunks = []
    for name, arr in arrays:
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        placement.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)

    header = {
        "meta": {
            "checkpoint_id": ckpt.checkpoint_id,
            "run_seed": ckpt.run_seed,
            "env_name": ckpt.env_name,
            "env_overrides": ckpt.env_overrides,
            "actuation": ckpt.actuation,
            "ppo": ckpt.ppo,
            "adam_t": ckpt.adam_t,
            "rng_states": ckpt.rng_states,
            "obs_norm": ckpt.obs_norm,
            "env_step": ckpt.env_step,
            "gradient_step": ckpt.gradient_step,
            "iteration": ckpt.iteration,
            "stored_losses": ckpt.stored_losses,
            "layout": layout_to_jsonable(ckpt.params.layout),
        },
        "arrays": placement,
        "payload_nbytes": len(payload),
        "payload_crc32": zlib.crc32(payload),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    """Read a checkpoint; raises distinct errors for version/truncation/corruption."""
    path = Path(path)
    blob = path.read_bytes()
    fixed = len(MAGIC) + 4 + 8
    if len(blob) < fixed:
        raise CheckpointTruncatedError(f"{path}: file shorter than the fixed header")
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointCorruptError(f"{path}: bad magic, not a checkpoint file")
    (version,) = struct.unpack_from("<I", blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads {FORMAT_VERSION}"
        )
    (header_len,) = struct.unpack_from("<Q", blob, len(MAGIC) + 4)
    if len(blob) < fixed + header_len:
        raise CheckpointTruncatedError(f"{path}: header truncated")
    try:
        header = json.loads(blob[fixed : fixed + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"{path}: header is not valid JSON: {exc}") from None

    payload = blob[fixed + header_len :]
    if len(payload) < header["payload_nbytes"]:
        raise CheckpointTruncatedError(
            f"{path}: payload has {len(payload)} bytes, header declares {header['payload_nbytes']}"
        )
    payload = payload[: header["payload_nbytes"]]
    if zlib.crc32(payload) != header["payload_crc32"]:
        raise CheckpointCorruptError(f"{path}: payload CRC mismatch")

    arrays = {}
    for entry in header["arrays"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()

    meta = header["meta"]
    layout = layout_from_jsonable(meta["layout"])
    params = FlatParams(arrays["params"], layout)
    frozen = Batch(
        observations=arrays["frozen.observations"],
        actions=arrays["frozen.actions"],
        old_log_probs=arrays["frozen.old_log_probs"],
        advantages=arrays["frozen.advantages"],
        returns=arrays["frozen.returns"],
        old_values=arrays["frozen.old_values"],
    )
    return Checkpoint(
        checkpoint_id=meta["checkpoint_id"],
        run_seed=meta["run_seed"],
        env_name=meta["env_name"],
        env_overrides=meta["env_overrides"],
        actuation=meta["actuation"],
        ppo=meta["ppo"],
        params=params,
        adam_m=arrays["adam_m"],
        adam_v=arrays["adam_v"],
        adam_t=meta["adam_t"],
        rng_states=meta["rng_states"],
        obs_norm=meta["obs_norm"],
        env_step=meta["env_step"],
        gradient_step=meta["gradient_step"],
        iteration=meta["iteration"],
        frozen=frozen,
        stored_losses=meta["stored_losses"],
    )


def load_checkpoint_series(run_dir: Path) -> list[Checkpoint]:
    """All checkpoints under run_dir/checkpoints, ordered by env_step."""
    ckpt_dir = Path(run_dir) / "checkpoints"
    if not ckpt_dir.is_dir():
        raise ConfigError(f"no checkpoints directory under {run_dir}")
    ckpts = [load_checkpoint(p) for p in sorted(ckpt_dir.glob("ckpt_*.bin"))]
    if not ckpts:
        raise ConfigError(f"no checkpoint files in {ckpt_dir}")
    return sorted(ckpts, key=lambda c: c.env_step)


# -- CSV ------------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    """Locale-independent CSV with '.' decimals and 17-digit floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def append_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    """Append rows, writing the header only if the file is new."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new_file = not path.exists()
    with open(path, "a", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new_file:
            writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise ConfigError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def column(header: list[str], rows: list[list[str]], name: str, dtype=float) -> np.ndarray:
    if name not in header:
        raise ConfigError(f"CSV has no column '{name}'; columns: {header}")
    idx = header.index(name)
    return np.array([dtype(r[idx]) for r in rows])


# -- colormaps --------------------------------------------------------------

_VIRIDIS = [
    (0.267004, 0.004874, 0.329415),
    (0.282623, 0.140926, 0.457517),
    (0.253935, 0.265254, 0.529983),
    (0.206756, 0.371758, 0.553117),
    (0.163625, 0.471133, 0.558148),
    (0.127568, 0.566949, 0.550556),
    (0.134692, 0.658636, 0.517649),
    (0.266941, 0.748751, 0.440573),
    (0.477504, 0.821444, 0.318195),
    (0.741388, 0.873449, 0.149561),
    (0.993248, 0.906157, 0.143936),
]

_GRAYS = [(0.05, 0.05, 0.05), (0.95, 0.95, 0.95)]

COLOR_MAPS = {"viridis": _VIRIDIS, "grays": _GRAYS}


def color_at(name: str, t: float) -> str:
    """Hex color at t in [0, 1] from a named map (linear anchors)."""
    if name not in COLOR_MAPS:
        raise ConfigError(f"unknown color map '{name}'; valid: {sorted(COLOR_MAPS)}")
    anchors = COLOR_MAPS[name]
    t = min(max(float(t), 0.0), 1.0)
    pos = t * (len(anchors) - 1)
    i = min(int(pos), len(anchors) - 2)
    frac = pos - i
    rgb = [anchors[i][c] * (1 - frac) + anchors[i + 1][c] * frac for c in range(3)]
    return "#" + "".join(f"{int(round(255 * v)):02x}" for v in rgb)


# -- SVG plots ---------------------------------------------------------------

_LINE_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


@dataclass(frozen=True)
class PlotSpec:
    """What to render: one CSV in, one SVG out."""

    kind: str
    input_csv: Path
    output_path: Path
    columns: dict = field(default_factory=dict)
    color_map: str = "viridis"
    title: str = ""
    negate: bool = False

    def __post_init__(self):
        if self.kind not in ("heatmap", "linecurve"):
            raise ConfigError(f"unknown plot kind '{self.kind}'")


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _svg_text(x, y, text, size=12, anchor="middle", fill="#000"):
    return (
        f'<text x="{x:.2f}" y="{y:.2f}" text-anchor="{anchor}" '
        f'font-size="{size}" font-family="Helvetica,Arial,sans-serif" fill="{fill}">{_esc(text)}</text>'
    )


def render_heatmap(spec: PlotSpec) -> Path:
    """Grid CSV (row,col,...,<value>,valid) -> colored-cell SVG.

    Every (row, col) pair of the full resolution x resolution grid must
    be present; missing cells are an error listing the gaps. Invalid
    cells are hatched and excluded from the color scale. The center cell
    carries a marker; the colorbar is labeled with min/max.
    """
    header, rows = read_csv(spec.input_csv)
    value_col = spec.columns.get("value", "reward")
    r = column(header, rows, "row", int)
    c = column(header, rows, "col", int)
    vals = column(header, rows, value_col, float)
    valid = column(header, rows, "valid", int).astype(bool) if "valid" in header else np.ones(len(r), bool)
    if spec.negate:
        vals = -vals

    res = int(max(r.max(), c.max())) + 1
    seen = set(zip(r.tolist(), c.tolist()))
    missing = [(i, j) for i in range(res) for j in range(res) if (i, j) not in seen]
    if missing:
        raise ConfigError(f"grid CSV is missing cells: {missing[:10]}{'...' if len(missing) > 10 else ''}")

    grid = np.full((res, res), np.nan)
    ok = np.zeros((res, res), bool)
    for i, j, v, g in zip(r, c, vals, valid):
        grid[int(i), int(j)] = v
        ok[int(i), int(j)] = g

    finite = grid[ok & np.isfinite(grid)]
    vmin = float(finite.min()) if finite.size else 0.0
    vmax = float(finite.max()) if finite.size else 1.0
    span = vmax - vmin

    cell = max(8, int(round(420 / res)))
    plot_w = cell * res
    margin_l, margin_t, bar_w = 60, 50, 18
    width = margin_l + plot_w + 30 + bar_w + 70
    height = margin_t + plot_w + 50

    out = []
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
    )
    out.append('<rect width="100%" height="100%" fill="#ffffff"/>')
    out.append(
        '<defs><pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse">'
        '<path d="M0,6 L6,0" stroke="#888888" stroke-width="1"/></pattern></defs>'
    )
    if spec.title:
        out.append(_svg_text(margin_l + plot_w / 2, 28, spec.title, size=15))

    for i in range(res):
        for j in range(res):
            x = margin_l + j * cell
            y = margin_t + i * cell
            if ok[i, j]:
                t = 0.5 if span == 0.0 else (grid[i, j] - vmin) / span
                fill = color_at(spec.color_map, t)
            else:
                fill = "url(#hatch)"
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}"/>')

    # Center marker: the grid midpoint is the unperturbed checkpoint.
    mid = res // 2
    cx = margin_l + mid * cell + cell / 2
    cy = margin_t + mid * cell + cell / 2
    out.append(
        f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{max(3, cell // 3)}" fill="none" '
        'stroke="#000000" stroke-width="2"/>'
    )

    bar_x = margin_l + plot_w + 30
    steps = 48
    for k in range(steps):
        t = 1.0 - (k + 0.5) / steps
        y = margin_t + k * plot_w / steps
        out.append(
            f'<rect x="{bar_x}" y="{y:.2f}" width="{bar_w}" height="{plot_w / steps + 0.5:.2f}" '
            f'fill="{color_at(spec.color_map, t)}"/>'
        )
    out.append(_svg_text(bar_x + bar_w + 6, margin_t + 10, f"{vmax:.6g}", anchor="start"))
    out.append(_svg_text(bar_x + bar_w + 6, margin_t + plot_w, f"{vmin:.6g}", anchor="start"))
    if span == 0.0:
        out.append(_svg_text(bar_x + bar_w + 6, margin_t + plot_w / 2, "min==max", anchor="start"))
    out.append(_svg_text(margin_l + plot_w / 2, margin_t + plot_w + 30, "direction 1 (alpha)"))
    out.append(
        f'<text x="{margin_l - 35}" y="{margin_t + plot_w / 2:.2f}" text-anchor="middle" '
        f'font-size="12" font-family="Helvetica,Arial,sans-serif" '
        f'transform="rotate(-90 {margin_l - 35} {margin_t + plot_w / 2:.2f})">direction 2 (beta)</text>'
    )
    out.append("</svg>")

    spec.output_path.parent.mkdir(parents=True, exist_ok=True)
    Path(spec.output_path).write_text("\n".join(out), encoding="utf-8")
    return Path(spec.output_path)


def _resample(xs: np.ndarray, ys: np.ndarray, grid: np.ndarray) -> np.ndarray:
    return np.interp(grid, xs, ys)


def render_learning_curves(spec: PlotSpec) -> Path:
    """Mean +- std learning-curve SVG grouped by label, then seed.

    Expects columns (label, seed, <x>, <y>); x defaults to env_step and y
    to mean_return. Seeds on different step grids are resampled onto their
    union by linear interpolation (with a warning). One seed collapses
    the band onto the line.
    """
    header, rows = read_csv(spec.input_csv)
    x_col = spec.columns.get("x", "env_step")
    y_col = spec.columns.get("y", "mean_return")
    label_col = spec.columns.get("group", "label")
    for col in (x_col, y_col, label_col, "seed"):
        if col not in header:
            raise ConfigError(f"CSV has no column '{col}'; columns: {header}")

    li, si = header.index(label_col), header.index("seed")
    xi, yi = header.index(x_col), header.index(y_col)
    series: dict[str, dict[str, list[tuple[float, float]]]] = {}
    for row in rows:
        series.setdefault(row[li], {}).setdefault(row[si], []).append((float(row[xi]), float(row[yi])))

    labels = sorted(series)
    summarized = []
    for label in labels:
        per_seed = []
        for seed in sorted(series[label]):
            pts = sorted(series[label][seed])
            per_seed.append((np.array([p[0] for p in pts]), np.array([p[1] for p in pts])))
        grids = [xs for xs, _ in per_seed]
        common = grids[0]
        if any(len(g) != len(common) or not np.array_equal(g, common) for g in grids):
            warnings.warn(f"curve '{label}': seeds use different step grids; resampling by linear interpolation")
            common = np.unique(np.concatenate(grids))
        ys = np.stack([_resample(xs, y, common) for xs, y in per_seed])
        summarized.append((label, common, ys.mean(axis=0), ys.std(axis=0)))

    width, height = 640, 420
    ml, mr, mt, mb = 80, 160, 50, 60
    pw, ph = width - ml - mr, height - mt - mb

    all_x = np.concatenate([s[1] for s in summarized])
    all_lo = np.concatenate([s[2] - s[3] for s in summarized])
    all_hi = np.concatenate([s[2] + s[3] for s in summarized])
    x_lo, x_hi = float(all_x.min()), float(all_x.max())
    y_lo, y_hi = float(all_lo.min()), float(all_hi.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def px(x):
        return ml + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return mt + ph - (y - y_lo) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="#ffffff"/>',
    ]
    if spec.title:
        out.append(_svg_text(ml + pw / 2, 24, spec.title, size=15))

    n_ticks = 5
    for k in range(n_ticks + 1):
        yv = y_lo + (y_hi - y_lo) * k / n_ticks
        out.append(
            f'<line x1="{ml}" y1="{py(yv):.2f}" x2="{ml + pw}" y2="{py(yv):.2f}" stroke="#dddddd" stroke-width="1"/>'
        )
        out.append(_svg_text(ml - 8, py(yv) + 4, f"{yv:.4g}", anchor="end", size=11))
        xv = x_lo + (x_hi - x_lo) * k / n_ticks
        out.append(_svg_text(px(xv), mt + ph + 18, f"{xv:.4g}", size=11))
    out.append(f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="#000" stroke-width="1.5"/>')
    out.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="#000" stroke-width="1.5"/>')
    out.append(_svg_text(ml + pw / 2, height - 16, x_col))
    out.append(
        f'<text x="22" y="{mt + ph / 2:.2f}" text-anchor="middle" font-size="12" '
        f'font-family="Helvetica,Arial,sans-serif" transform="rotate(-90 22 {mt + ph / 2:.2f})">{_esc(y_col)}</text>'
    )

    for idx, (label, xs, mean, std) in enumerate(summarized):
        color = _LINE_COLORS[idx % len(_LINE_COLORS)]
        upper = [(px(x), py(m + s)) for x, m, s in zip(xs, mean, std)]
        lower = [(px(x), py(m - s)) for x, m, s in zip(xs, mean, std)][::-1]
        band = " ".join(f"{x:.2f},{y:.2f}" for x, y in upper + lower)
        out.append(f'<polygon points="{band}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{px(x):.2f},{py(m):.2f}" for x, m in zip(xs, mean))
        out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = mt + 16 + idx * 20
        lx = ml + pw + 14
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 22}" y2="{ly}" stroke="{color}" stroke-width="3"/>')
        out.append(_svg_text(lx + 28, ly + 4, label, anchor="start", size=12))

    out.append("</svg>")
    spec.output_path.parent.mkdir(parents=True, exist_ok=True)
    Path(spec.output_path).write_text("\n".join(out), encoding="utf-8")
    return Path(spec.output_path)
