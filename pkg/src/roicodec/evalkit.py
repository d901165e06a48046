"""Metrics, BD-rate, Gaussianity diagnostics and report emission.

PSNR is computed on [0,1] floats (peak = 1); imported anchor points from
8-bit tooling should be converted before comparison. BD-rate uses a
monotonicity-safe piecewise-cubic (PCHIP) fit of log10(rate) against
quality by default; the classic cubic polynomial fit is available behind
``method="cubic"`` for cross-checking.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import ndtri

import torch

from .entropy import GaussianParams, gaussian_bits

PSNR_CAP = 99.0


@dataclass
class RdPoint:
    bpp: float
    psnr: float
    roi_psnr: float
    bg_psnr: float
    label: str = ""

    def quality(self, field: str) -> float:
        return float(getattr(self, field))


@dataclass
class RdCurve:
    points: list
    codec_id: str = ""

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: p.bpp)
        bpps = [p.bpp for p in self.points]
        if len(bpps) < 3:
            raise ValueError("an RD curve needs at least 3 points for BD interpolation")
        if any(b <= 0 for b in bpps):
            raise ValueError("bpp values must be positive")
        if any(b2 <= b1 for b1, b2 in zip(bpps, bpps[1:])):
            raise ValueError("bpp values must be strictly increasing")

    def arrays(self, field: str):
        q = np.array([p.quality(field) for p in self.points], dtype=np.float64)
        r = np.log10([p.bpp for p in self.points])
        order = np.argsort(q)
        return q[order], r[order]


def mse_region(x, x_hat, mask=None, region="all"):
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError("psnr inputs must have identical dims")
    err = (x - x_hat) ** 2
    if region == "all":
        return float(err.mean())
    if mask is None:
        raise ValueError(f"region={region!r} requires a mask")
    m = np.asarray(mask, dtype=np.float64)
    sel = m > 0.5 if region == "fg" else m <= 0.5
    if not np.any(sel):
        raise ValueError(f"empty {region} region")
    return float(err[sel].mean())


def psnr(x, x_hat, mask=None, region="all"):
    """10*log10(1/MSE) on the [0,1] scale, capped at 99 dB."""
    m = mse_region(x, x_hat, mask, region)
    if m == 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(1.0 / m), PSNR_CAP))


def _fit_log_rate(q, r, method):
    if method == "pchip":
        return PchipInterpolator(q, r)
    if method == "cubic":
        coeffs = np.polyfit(q, r, 3)
        poly = np.poly1d(coeffs)
        integ = poly.integ()
        class _P:  # tiny adapter so both methods expose .integrate
            def integrate(self, a, b):
                return integ(b) - integ(a)
        return _P()
    raise ValueError(f"unknown BD interpolation method {method!r}")


def bd_rate(anchor: RdCurve, test: RdCurve, quality_field="psnr", method="pchip") -> float:
    """Average rate difference (%) of `test` vs `anchor` at equal quality.

    Negative means the test codec needs fewer bits for the same quality.
    """
    qa, ra = anchor.arrays(quality_field)
    qt, rt = test.arrays(quality_field)
    lo = max(qa.min(), qt.min())
    hi = min(qa.max(), qt.max())
    if hi <= lo:
        raise ValueError("RD curves have no overlapping quality range")
    fa = _fit_log_rate(qa, ra, method)
    ft = _fit_log_rate(qt, rt, method)
    avg_diff = (ft.integrate(lo, hi) - fa.integrate(lo, hi)) / (hi - lo)
    return float(100.0 * (10.0 ** avg_diff - 1.0))


def pcc_normality(samples) -> float:
    """Pearson correlation of sorted samples vs normal quantiles.

    Plotting positions use Blom's constant: (i - 0.375) / (n + 0.25).
    """
    s = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
    n = s.size
    if n < 100:
        raise ValueError("pcc_normality needs at least 100 samples")
    if s[0] == s[-1]:
        raise ValueError("constant input has no quantile correlation")
    positions = (np.arange(1, n + 1) - 0.375) / (n + 0.25)
    theoretical = ndtri(positions)
    return float(np.corrcoef(s, theoretical)[0, 1])


def bit_allocation_map(y_hat, params: GaussianParams) -> np.ndarray:
    """Per-position bits (summed over channels) at latent resolution."""
    if not torch.is_tensor(y_hat):
        y_hat = torch.as_tensor(np.asarray(y_hat, dtype=np.float32))
    bits = gaussian_bits(y_hat, params)
    while bits.dim() > 3:
        bits = bits[0]
    return bits.sum(dim=0).detach().cpu().numpy()


def render_heatmap(heat, path, vmax=None, title=""):
    fig, ax = plt.subplots(figsize=(4, 4), dpi=100)
    im = ax.imshow(heat, cmap="magma", vmin=0.0, vmax=vmax)
    ax.set_title(title)
    ax.axis("off")
    fig.colorbar(im, ax=ax, fraction=0.046)
    _save(fig, path)


def render_normal_plot(samples, path, title=""):
    s = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
    n = s.size
    theo = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    stride = max(1, n // 4000)
    fig, ax = plt.subplots(figsize=(4, 4), dpi=100)
    ax.plot(theo[::stride], s[::stride], ".", ms=2)
    lim = [theo[0], theo[-1]]
    med = np.median(s)
    iqr_slope = (np.percentile(s, 75) - np.percentile(s, 25)) / (ndtri(0.75) - ndtri(0.25))
    ax.plot(lim, [med + iqr_slope * t for t in lim], "r-", lw=1)
    ax.set_xlabel("theoretical quantiles")
    ax.set_ylabel("sample quantiles")
    ax.set_title(title)
    _save(fig, path)


def read_rd_points(path) -> dict[str, RdCurve]:
    """Parse `label, bpp, psnr, roi_psnr, bg_psnr` lines into curves."""
    groups: dict[str, list] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.lower().startswith("label"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 5:
                raise ValueError(f"bad RD point line: {line!r}")
            label = parts[0]
            vals = [float(v) for v in parts[1:]]
            groups.setdefault(label, []).append(RdPoint(*vals, label=label))
    return {label: RdCurve(points, codec_id=label) for label, points in groups.items()}


def write_rd_points(curves, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("label, bpp, psnr, roi_psnr, bg_psnr\n")
        for curve in curves:
            for p in curve.points:
                fh.write(f"{curve.codec_id}, {p.bpp:.6f}, {p.psnr:.4f}, {p.roi_psnr:.4f}, {p.bg_psnr:.4f}\n")


def emit_report(curves, diagnostics, out_dir):
    """Write RD plots, BD matrices, normality plots/values and heatmaps.

    `curves` is a list of RdCurve; `diagnostics` may carry:
      - 'latents': {name: flat sample array} for normality analysis
      - 'heatmaps': {name: 2-D bit map}
      - 'notes': {name: string} echoed into the summary
    Regeneration from identical inputs is byte-identical.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    if curves:
        for field in ("psnr", "roi_psnr"):
            fig, ax = plt.subplots(figsize=(5, 4), dpi=100)
            for curve in curves:
                xs = [p.bpp for p in curve.points]
                ys = [p.quality(field) for p in curve.points]
                ax.plot(xs, ys, "o-", label=curve.codec_id)
            ax.set_xlabel("bpp")
            ax.set_ylabel(f"{field} (dB)")
            ax.grid(True, alpha=0.3)
            ax.legend()
            path = os.path.join(out_dir, f"rd_{field}.png")
            _save(fig, path)
            written.append(path)
        path = os.path.join(out_dir, "rd_points.csv")
        write_rd_points(curves, path)
        written.append(path)

    bd_lines = ["quality_field, anchor, test, bd_rate_percent"]
    for field in ("psnr", "roi_psnr"):
        for a in curves:
            for t in curves:
                if a is t:
                    continue
                try:
                    val = bd_rate(a, t, quality_field=field)
                    bd_lines.append(f"{field}, {a.codec_id}, {t.codec_id}, {val:.4f}")
                except ValueError as err:
                    bd_lines.append(f"{field}, {a.codec_id}, {t.codec_id}, error: {err}")
    if curves:
        path = os.path.join(out_dir, "bd_matrix.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(bd_lines) + "\n")
        written.append(path)

    diagnostics = diagnostics or {}
    pcc_lines = ["name, pcc"]
    for name, samples in sorted(diagnostics.get("latents", {}).items()):
        val = pcc_normality(samples)
        pcc_lines.append(f"{name}, {val:.6f}")
        plot_path = os.path.join(out_dir, f"normplot_{name}.png")
        render_normal_plot(samples, plot_path, title=f"{name} (PCC={val:.4f})")
        written.append(plot_path)
    if len(pcc_lines) > 1:
        path = os.path.join(out_dir, "pcc.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(pcc_lines) + "\n")
        written.append(path)

    for name, heat in sorted(diagnostics.get("heatmaps", {}).items()):
        path = os.path.join(out_dir, f"bits_{name}.png")
        render_heatmap(heat, path, title=name)
        written.append(path)

    summary = os.path.join(out_dir, "summary.txt")
    with open(summary, "w", encoding="utf-8") as fh:
        fh.write("codec report\n============\n")
        for curve in curves:
            fh.write(f"curve {curve.codec_id}: {len(curve.points)} points\n")
        fh.write("\n".join(bd_lines) + "\n")
        fh.write("\n".join(pcc_lines) + "\n")
        for name, note in sorted(diagnostics.get("notes", {}).items()):
            fh.write(f"note {name}: {note}\n")
    written.append(summary)
    return written


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
