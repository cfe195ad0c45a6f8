"""Interpretability tools: influential-gradient masks, mask IoU with a Wilcoxon
signed-rank test, the GP/L gradient-norm ratio, and learnable-beta export.
"""
from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from . import degrade, dsp
from .generator import Generator, LearnableSoftplus, load_generator

SNR_GRID = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
CUTOFF_GRID = (2000.0, 3000.0, 4000.0, 5000.0, 6000.0, 7000.0)


# --- influential gradients ---------------------------------------------------


@dataclass
class GradientAttribution:
    mask: np.ndarray                       # (T, F) in {0, 1}
    gradient_weighted_spectrogram: np.ndarray
    retained_fraction: float
    normalized_gradient: np.ndarray
    resolution: int


def minmax_normalize(g: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]. A constant positive field maps to ones, an all-zero field to zeros."""
    lo, hi = float(g.min()), float(g.max())
    if hi > lo:
        return (g - lo) / (hi - lo)
    return np.ones_like(g) if hi > 0 else np.zeros_like(g)


def top_fraction_mask(values: np.ndarray, fraction: float = 0.1) -> np.ndarray:
    """Binary mask of the ``round(fraction * size)`` largest entries of a 2-D grid.

    Ties are broken by value descending, then time index, then frequency index.
    Entries equal to zero are never retained.
    """
    if values.ndim != 2:
        raise ValueError("expected a (T, F) grid")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    t_idx, f_idx = np.indices(values.shape)
    k = int(round(fraction * values.size))
    # lexsort keys are given least-significant first
    order = np.lexsort((f_idx.ravel(), t_idx.ravel(), -values.ravel()))[:k]
    mask = np.zeros(values.size, dtype=np.uint8)
    mask[order] = 1
    mask &= (values.ravel() > 0).astype(np.uint8)
    return mask.reshape(values.shape)


def influential_gradients(model: Generator, degraded_w, resolution_idx: int,
                          fraction: float = 0.1) -> GradientAttribution:
    """Input-magnitude gradients of one first-block branch output.

    The branch output is summed to a scalar, differentiated with respect to
    the compressed input magnitude, rectified, min-max normalized, and the
    top ``fraction`` kept as a binary mask.
    """
    block = model.bottleneck.blocks[0]
    if not 0 <= resolution_idx < len(block.branches):
        raise ValueError(f"resolution index {resolution_idx} out of range for "
                         f"{len(block.branches)} branch(es)")
    w = dsp.as_tensor(degraded_w, next(model.parameters()).dtype)
    if w.dim() == 1:
        w = w[None]
    model.eval()
    cmag, phase = model.analyze(w)
    cmag = cmag.detach().requires_grad_(True)
    outs = block.branch_outputs(model.encode(cmag, phase))
    (grad,) = torch.autograd.grad(outs[resolution_idx].sum(), cmag)
    g = torch.relu(grad[0]).detach().double().numpy()
    if not g.any():
        warnings.warn("all attribution gradients are zero; returning an empty mask")
    norm = minmax_normalize(g)
    mask = top_fraction_mask(norm, fraction)
    mag = dsp.magnitude_phase(dsp.stft(w[0], model.cfg.stft))[0].detach().double().numpy()
    return GradientAttribution(mask, mask * mag, float(mask.mean()), norm, resolution_idx)


# --- IoU and Wilcoxon --------------------------------------------------------


def upsample_nearest(mask: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    rows = np.minimum(np.arange(shape[0]) * mask.shape[0] // shape[0], mask.shape[0] - 1)
    cols = np.minimum(np.arange(shape[1]) * mask.shape[1] // shape[1], mask.shape[1] - 1)
    return mask[np.ix_(rows, cols)]


def iou(a: np.ndarray, b: np.ndarray) -> float:
    a, b = a.astype(bool), b.astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        warnings.warn("IoU of two empty masks is defined as 0")
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def resolution_iou(masks: Sequence[np.ndarray]) -> Tuple[np.ndarray, float]:
    """Pairwise IoU matrix and the mean over unordered pairs.

    Smaller masks are brought to the largest grid by nearest-neighbour upsampling.
    """
    if len(masks) < 2:
        raise ValueError("need at least two masks")
    shape = (max(m.shape[0] for m in masks), max(m.shape[1] for m in masks))
    grids = [upsample_nearest(np.asarray(m), shape) for m in masks]
    n = len(grids)
    mat = np.eye(n)
    for i, j in itertools.combinations(range(n), 2):
        mat[i, j] = mat[j, i] = iou(grids[i], grids[j])
    for i in range(n):
        if not grids[i].any():
            mat[i, i] = 0.0
    pairs = [mat[i, j] for i, j in itertools.combinations(range(n), 2)]
    return mat, float(np.mean(pairs))


def _average_ranks(a: np.ndarray) -> np.ndarray:
    order = np.argsort(a, kind="mergesort")
    ranks = np.empty(len(a))
    sorted_a = a[order]
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and sorted_a[j + 1] == sorted_a[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def _exact_signed_rank_pvalue(ranks: np.ndarray, w_plus: float) -> float:
    """Two-sided p-value by enumerating the null distribution of W+.

    Ranks may be half-integers (ties), so everything is doubled to integers.
    """
    r2 = np.rint(2 * ranks).astype(int)
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in r2:
        counts[r:] = counts[r:] + counts[:total + 1 - r].copy()
    w2 = int(round(2 * w_plus))
    n_assign = 2 ** len(r2)
    lower = sum(counts[:w2 + 1]) / n_assign
    upper = sum(counts[w2:]) / n_assign
    return float(min(1.0, 2 * min(lower, upper)))


def wilcoxon_signed_rank(x, y, exact_max_n: int = 25) -> Tuple[float, float]:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Returns ``(statistic, p_value)`` with statistic = min(W+, W-). Zero
    differences are dropped. Exact enumeration for n <= ``exact_max_n``,
    otherwise a normal approximation with tie correction.
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D and of equal length")
    d = y - x
    d = d[d != 0]
    if d.size == 0:
        raise ValueError("all paired differences are zero")
    n = d.size
    if n < 5:
        raise ValueError(f"need at least 5 nonzero differences, got {n}")
    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    stat = min(w_plus, w_minus)
    if n <= exact_max_n:
        return stat, _exact_signed_rank_pvalue(ranks, w_plus)
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - float(((tie_counts ** 3) - tie_counts).sum()) / 48
    z = (w_plus - n * (n + 1) / 4) / math.sqrt(var)
    return stat, float(math.erfc(abs(z) / math.sqrt(2)))


# --- GP / L gradient ratio ---------------------------------------------------


@dataclass
class GlpRatioReport:
    kind: str
    levels: List[float]
    ratios: List[float]
    g_gp: List[float] = field(default_factory=list)
    g_l: List[float] = field(default_factory=list)

    def rows(self) -> List[Dict[str, float]]:
        return [{"kind": self.kind, "level": lv, "g_gp": a, "g_l": b, "ratio": r}
                for lv, a, b, r in zip(self.levels, self.g_gp, self.g_l, self.ratios)]


def gradient_ratio(g_gp: float, g_l: float) -> float:
    if g_l == 0:
        warnings.warn("L-module gradient norm is zero; ratio reported as +inf")
        return math.inf
    return g_gp / g_l


def glp_gradient_norms(model: Generator, degraded_w) -> Tuple[List[float], List[float]]:
    """Per-block L2 norms of d(sum of restored waveform)/d(GP output) and /d(L output).

    Only the top-resolution branch of every block is probed.
    """
    captured = {"gp": [], "l": []}
    handles = []

    def keep(name):
        def hook(_module, _inp, out):
            out.retain_grad()
            captured[name].append(out)
        return hook

    for block in model.bottleneck.blocks:
        glp = block.branches[0].freq
        handles.append(glp.glob.register_forward_hook(keep("gp")))
        handles.append(glp.local.register_forward_hook(keep("l")))
    try:
        model.eval()
        w = dsp.as_tensor(degraded_w, next(model.parameters()).dtype)
        out = model.restore_full(w[None] if w.dim() == 1 else w)["wave"]
        model.zero_grad(set_to_none=True)
        out.sum().backward()
    finally:
        for h in handles:
            h.remove()

    def norms(ts):
        return [float(t.grad.norm()) if t.grad is not None else 0.0 for t in ts]

    return norms(captured["gp"]), norms(captured["l"])


def _degrade(w: np.ndarray, kind: str, level: float, seed: int) -> np.ndarray:
    if kind == "noise":
        noise = np.random.default_rng(seed).standard_normal(len(w))
        return degrade.peak_limit(degrade.add_noise(w, noise, level))
    if kind == "bandwidth":
        return degrade.bandwidth_limit(w, level)
    raise ValueError(f"unknown degradation axis {kind!r}; expected 'noise' or 'bandwidth'")


def glp_gradient_ratio(model: Generator, corpus: Sequence[np.ndarray], kind: str = "noise",
                       levels: Optional[Sequence[float]] = None, seed: int = 0) -> GlpRatioReport:
    """R = G_GP / G_L per degradation level, norms averaged over blocks and items."""
    if not corpus:
        raise ValueError("empty corpus")
    if levels is None:
        levels = SNR_GRID if kind == "noise" else CUTOFF_GRID
    report = GlpRatioReport(kind, [float(v) for v in levels], [])
    for level in levels:
        gp_all, l_all = [], []
        for i, w in enumerate(corpus):
            gp, l = glp_gradient_norms(model, _degrade(np.asarray(w, float), kind, level,
                                                       degrade.item_seed(seed, i)))
            gp_all.extend(gp)
            l_all.extend(l)
        g_gp, g_l = float(np.mean(gp_all)), float(np.mean(l_all))
        report.g_gp.append(g_gp)
        report.g_l.append(g_l)
        report.ratios.append(gradient_ratio(g_gp, g_l))
    return report


# --- betas -------------------------------------------------------------------


def export_betas(ckpt: Union[str, Path, Generator], sample_rate: int = 16000) -> List[Tuple[float, float]]:
    """Rows of (frequency_hz, beta) for the learnable-softplus magnitude head."""
    model = ckpt if isinstance(ckpt, Generator) else load_generator(ckpt)
    head = model.mag_decoder.head
    if not isinstance(head, LearnableSoftplus):
        raise ValueError("checkpoint uses a masking head; it has no learnable betas")
    beta = head.beta.detach().double().numpy()
    step = (sample_rate / 2) / (len(beta) - 1)
    return [(f * step, float(b)) for f, b in enumerate(beta)]


# --- output ------------------------------------------------------------------


def write_rows(path, rows: Sequence[Dict], fieldnames: Optional[Sequence[str]] = None) -> None:
    rows = list(rows)
    fieldnames = list(fieldnames or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, delimiter="\t")
        writer.writeheader()
        writer.writerows(rows)


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_attributions(attributions: Sequence[GradientAttribution], path) -> None:
    plt = _pyplot()
    fig, axes = plt.subplots(1, len(attributions), figsize=(4 * len(attributions), 3.5), squeeze=False)
    for ax, a in zip(axes[0], attributions):
        ax.imshow(np.log10(a.gradient_weighted_spectrogram.T + 1e-8), origin="lower", aspect="auto",
                  cmap="magma", vmin=-4)
        ax.set_title(f"resolution {a.resolution}")
        ax.set_xlabel("frame")
        ax.set_ylabel("bin")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_ratio(reports: Sequence[GlpRatioReport], path) -> None:
    plt = _pyplot()
    fig, axes = plt.subplots(1, len(reports), figsize=(4 * len(reports), 3), squeeze=False)
    for ax, r in zip(axes[0], reports):
        ax.plot(r.levels, r.ratios, marker="o")
        ax.set_xlabel("SNR (dB)" if r.kind == "noise" else "cutoff (Hz)")
        ax.set_ylabel("G_GP / G_L")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_betas(rows: Sequence[Tuple[float, float]], path) -> None:
    plt = _pyplot()
    freqs, betas = zip(*rows)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3))
    ax1.plot(freqs, betas)
    ax1.set_xlabel("frequency (Hz)")
    ax1.set_ylabel("beta")
    x = np.linspace(-3, 3, 200)
    for f_idx in np.linspace(0, len(betas) - 1, 5).astype(int):
        b = betas[f_idx]
        ax2.plot(x, np.logaddexp(0, b * x) / b, label=f"{freqs[f_idx]:.0f} Hz")
    ax2.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
