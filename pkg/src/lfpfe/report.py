"""Metrics tables, summaries and figures written next to them."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .lightfield import extract_epi_h, extract_epi_v  # noqa: E402
from .pfe import PATTERNS, ArchitectureMask  # noqa: E402

CR_COLUMNS = ["scene", "psnr", "ssim", "stage"]
DN_COLUMNS = ["scene", "sigma", "method", "psnr", "ssim"]


def write_csv(rows: list[dict], path, columns: list[str] | None = None) -> Path:
    """Write ``rows`` with ``columns`` first, then any extra keys in first-seen order."""
    cols = list(columns or [])
    for row in rows:
        cols.extend(k for k in row if k not in cols)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k, "")) for k in cols})
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _cell(value):
    if isinstance(value, float):
        return f"{value:.6f}"
    return value


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


# ------------------------------------------------------------------ summaries

def summarize_cr(rows: list[dict]) -> dict:
    stages = sorted({r["stage"] for r in rows if r["stage"] != "baseline"}, key=int)
    scenes = list(dict.fromkeys(r["scene"] for r in rows))
    per_stage = {
        str(t): {
            "psnr": float(np.mean([r["psnr"] for r in rows if r["stage"] == t])),
            "ssim": float(np.mean([r["ssim"] for r in rows if r["stage"] == t])),
        }
        for t in stages
    }
    base = [r for r in rows if r["stage"] == "baseline"]
    out = {"scenes": len(scenes), "stages": per_stage}
    if stages:
        final = per_stage[str(stages[-1])]
        out.update(psnr=final["psnr"], ssim=final["ssim"])
        curves = [[r["psnr"] for r in rows if r["scene"] == s and r["stage"] != "baseline"] for s in scenes]
        mono = [bool(np.all(np.diff(c) >= 0)) for c in curves]
        out["stage_nondecreasing_fraction"] = float(np.mean(mono)) if mono else 1.0
    if base:
        out["baseline_psnr"] = float(np.mean([r["psnr"] for r in base]))
        out["baseline_ssim"] = float(np.mean([r["ssim"] for r in base]))
        if stages:
            out["gain_db"] = out["psnr"] - out["baseline_psnr"]
    return out


def view_columns(rows: list[dict]) -> list[str]:
    return [k for k in rows[0] if k.startswith("psnr_v")] if rows else []


def summarize_dn(rows: list[dict]) -> dict:
    out = {}
    for method in dict.fromkeys(r["method"] for r in rows):
        sel = [r for r in rows if r["method"] == method]
        views = np.array([[r[k] for k in view_columns(sel)] for r in sel], dtype=float)
        entry = {"psnr": float(np.mean([r["psnr"] for r in sel])),
                 "ssim": float(np.mean([r["ssim"] for r in sel]))}
        if views.size:
            mean_views = views.mean(axis=0)
            entry["view_psnr"] = mean_views.tolist()
            entry["view_spread_db"] = float(mean_views.max() - mean_views.min())
            entry["max_scene_view_spread_db"] = float((views.max(axis=1) - views.min(axis=1)).max())
        out[method] = entry
    if "pfe" in out:
        for base in ("identity", "angular_mean"):
            if base in out:
                out[f"gain_over_{base}_db"] = out["pfe"]["psnr"] - out[base]["psnr"]
    return out


# ------------------------------------------------------------------ figures

def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_stage_psnr(rows: list[dict], path) -> Path:
    summary = summarize_cr(rows)
    stages = sorted(summary["stages"], key=int)
    scenes = list(dict.fromkeys(r["scene"] for r in rows))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for s in scenes:
        curve = [r["psnr"] for r in rows if r["scene"] == s and r["stage"] != "baseline"]
        ax.plot(range(len(curve)), curve, color="0.8", lw=0.8)
    ax.plot([int(t) for t in stages], [summary["stages"][t]["psnr"] for t in stages], "o-", color="C0", label="mean")
    if "baseline_psnr" in summary:
        ax.axhline(summary["baseline_psnr"], color="C3", ls="--", label="tile mean")
    ax.set_xlabel("stage")
    ax.set_ylabel("PSNR (dB)")
    ax.set_xticks([int(t) for t in stages])
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_view_psnr(rows: list[dict], m: int, n: int, path, method: str = "pfe") -> Path:
    sel = [r for r in rows if r.get("method", method) == method]
    cols = view_columns(sel)
    grid = np.array([[r[k] for k in cols] for r in sel], dtype=float).mean(axis=0).reshape(m, n)
    fig, ax = plt.subplots(figsize=(3.5, 3.2))
    im = ax.imshow(grid, cmap="viridis")
    for (u, v), val in np.ndenumerate(grid):
        ax.text(v, u, f"{val:.2f}", ha="center", va="center", color="w", fontsize=8)
    ax.set_xlabel("v")
    ax.set_ylabel("u")
    ax.set_title(f"per-view PSNR, spread {grid.max() - grid.min():.2f} dB", fontsize=9)
    fig.colorbar(im, ax=ax, shrink=0.8)
    return _save(fig, path)


def plot_loss(history: dict, path) -> Path:
    loss = np.asarray(history["loss"], dtype=float)
    phases = history.get("phase", ["train"] * len(loss))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = np.arange(len(loss))
    ax.plot(steps, loss, color="0.75", lw=0.6)
    k = max(len(loss) // 50, 1)
    if len(loss) >= k:
        smooth = np.convolve(loss, np.ones(k) / k, mode="valid")
        ax.plot(steps[k - 1:], smooth, color="C0")
    start = 0
    for i in range(1, len(phases) + 1):
        if i == len(phases) or phases[i] != phases[start]:
            ax.axvline(start, color="0.5", ls=":", lw=0.8)
            ax.text(start, 1.0, f" {phases[start]}", transform=ax.get_xaxis_transform(), va="top", fontsize=8)
            start = i
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("L1 loss")
    return _save(fig, path)


def plot_epis(panels: dict[str, np.ndarray], path, u: int | None = None, x: int | None = None) -> Path:
    """Horizontal EPIs at ``(u, x)`` of several light fields stacked vertically."""
    first = next(iter(panels.values()))
    u = first.shape[0] // 2 if u is None else u
    x = first.shape[2] // 2 if x is None else x
    fig, axes = plt.subplots(len(panels), 1, figsize=(6, 0.9 * len(panels) + 0.4), squeeze=False)
    for ax, (name, lf) in zip(axes[:, 0], panels.items()):
        epi = extract_epi_h(lf, u, x)
        ax.imshow(np.clip(epi, 0, 1), cmap="gray", vmin=0, vmax=1, aspect="auto", interpolation="nearest")
        ax.set_ylabel(name, rotation=0, ha="right", va="center", fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    return _save(fig, path)


def plot_architecture(arches: list[ArchitectureMask], path) -> Path:
    """Kept patterns (top) and kept aggregation sources (bottom) per stage."""
    T = len(arches)
    fig, axes = plt.subplots(2, T, figsize=(2.4 * T + 0.5, 4.6), squeeze=False)
    for t, arch in enumerate(arches):
        J = arch.units
        pat = np.zeros((J, len(PATTERNS)))
        src = np.full((J, J), np.nan)
        for j in range(J):
            for l, name in enumerate(PATTERNS):
                pat[j, l] = 2 if name in arch.patterns[j] else arch.v[j][l] * 0.5
            for k in range(j + 1):
                src[j, k] = 2 if k in arch.sources[j] else arch.u[j][k] * 0.5
        for ax, grid, xt in ((axes[0, t], pat, list(PATTERNS)), (axes[1, t], src, [f"H{k}" for k in range(J)])):
            ax.imshow(grid, cmap="Blues", vmin=0, vmax=2)
            ax.set_xticks(range(len(xt)))
            ax.set_xticklabels(xt, rotation=90, fontsize=7)
            ax.set_yticks(range(J))
            ax.set_yticklabels([f"u{j + 1}" + ("" if arch.live[j] else " x") for j in range(J)], fontsize=7)
        axes[0, t].set_title(f"stage {t}", fontsize=9)
    fig.suptitle("dark: kept and live, light: gate on but pruned", fontsize=8)
    return _save(fig, path)


def epi_images(lf: np.ndarray, u: int | None = None, x: int | None = None,
               v: int | None = None, y: int | None = None) -> dict[str, np.ndarray]:
    """Horizontal EPI at ``(u, x)`` and vertical EPI at ``(v, y)``, centre by default."""
    m, n, h, w = lf.shape
    u = m // 2 if u is None else u
    x = h // 2 if x is None else x
    v = n // 2 if v is None else v
    y = w // 2 if y is None else y
    return {f"epi_h_u{u}_x{x}": extract_epi_h(lf, u, x), f"epi_v_v{v}_y{y}": extract_epi_v(lf, v, y)}
