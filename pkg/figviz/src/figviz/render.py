"""The four figure families rendered from stored simulator outputs.

Rendering is a pure function of the parsed inputs and the style mapping.
Because image bytes can drift across toolkit versions, reproducibility is
pinned on the plotted data instead: every render returns a sha256 digest of
the exact arrays placed on the axes (see the package README).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import io
from .io import SchemaError

FAMILIES = ("timeseries", "phasediagram", "echo", "decay")

DEFAULT_STYLE = {
    "odd_color": "tab:green",      # odd-cycle samples
    "even_color": "tab:blue",      # even-cycle samples
    "line_color": "0.55",
    "envelope_color": "black",
    "boundary_dash_color": "black",
    "curve_colors": ["tab:blue", "tab:red", "tab:green", "tab:orange", "tab:purple"],
    "marker_size": 14.0,
    "dpi": 150,
}


@dataclass
class FigureSpec:
    family: str
    inputs: list[str]
    style: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SchemaError(
                f"unknown figure family {self.family!r}; choose one of {FAMILIES}"
            )
        if not self.inputs:
            raise SchemaError("at least one input file is required")

    def merged_style(self) -> dict:
        merged = dict(DEFAULT_STYLE)
        merged.update(self.style)
        return merged


def load_style(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        style = json.load(fh)
    if not isinstance(style, dict):
        raise SchemaError(f"{path}: style file must hold a JSON object")
    return style


class _Digest:
    def __init__(self):
        self._h = hashlib.sha256()

    def add(self, label: str, *arrays):
        self._h.update(label.encode())
        for arr in arrays:
            a = np.asarray(arr, dtype=float)
            self._h.update(a.tobytes())

    def hex(self) -> str:
        return self._h.hexdigest()


def render(spec: FigureSpec, out_path) -> str:
    """Render one figure family to ``out_path``; returns the data digest."""
    style = spec.merged_style()
    digest = _Digest()
    fig = _FAMILY_RENDERERS[spec.family](spec.inputs, style, digest)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=style["dpi"])
    plt.close(fig)
    return digest.hex()


def _split_records_spectra(inputs):
    records, spectra = [], []
    for path in inputs:
        table = io.classify_and_read(path)
        if isinstance(table, io.RecordTable):
            records.append(table)
        elif isinstance(table, io.SpectrumTable):
            spectra.append(table)
        else:
            raise SchemaError(f"{path}: timeseries figures take records and spectra")
    if not records:
        raise SchemaError("timeseries family needs at least one record input")
    return records, spectra


def _scatter_odd_even(ax, rec, style, digest, label=None):
    odd = rec.cycles % 2 == 1
    ax.plot(rec.cycles, rec.mz, lw=0.8, color=style["line_color"], zorder=1)
    ax.scatter(rec.cycles[odd], rec.mz[odd], s=style["marker_size"],
               color=style["odd_color"], zorder=2, label=label)
    ax.scatter(rec.cycles[~odd], rec.mz[~odd], s=style["marker_size"],
               color=style["even_color"], zorder=2)
    digest.add(f"record:{Path(rec.path).name}", rec.cycles, rec.mz)


def _render_timeseries(inputs, style, digest):
    """Rows of (magnetization vs cycle, one-sided spectrum) panels."""
    records, spectra = _split_records_spectra(inputs)
    nrows = len(records)
    ncols = 2 if spectra else 1
    fig, axes = plt.subplots(
        nrows, ncols, figsize=(4.2 * ncols, 2.4 * nrows), squeeze=False
    )
    for i, rec in enumerate(records):
        ax = axes[i][0]
        _scatter_odd_even(ax, rec, style, digest)
        ax.set_ylabel("$M_z$")
        ax.set_ylim(-1.05, 1.05)
        title = []
        if "tau" in rec.meta:
            title.append(f"tau = {float(rec.meta['tau']) * 1e6:g} us")
        if "theta" in rec.meta:
            title.append(f"theta = {float(rec.meta['theta']) / math.pi:.3f} pi")
        if title:
            ax.set_title(", ".join(title), fontsize=8)
        if i == nrows - 1:
            ax.set_xlabel("cycle $N$")
        if spectra:
            axs = axes[i][1]
            if i < len(spectra):
                spec = spectra[i]
                axs.plot(spec.nu_tilde, spec.power, color=style["curve_colors"][0])
                axs.axvline(0.5, color=style["line_color"], lw=0.6, ls=":")
                axs.set_ylabel("power")
                digest.add(f"spectrum:{Path(spec.path).name}", spec.nu_tilde, spec.power)
            if i == nrows - 1:
                axs.set_xlabel(r"$\tilde\nu$")
    fig.tight_layout()
    return fig


def _render_phasediagram(inputs, style, digest):
    """Fraction-vs-angle slices plus the region width against the W*tau line."""
    fits = None
    fractions = []
    for path in inputs:
        table = io.classify_and_read(path)
        if isinstance(table, io.FitTable):
            fits = table
        elif isinstance(table, io.FractionTable):
            fractions.append(table)
        else:
            raise SchemaError(f"{path}: phase-diagram figures take a fit table and fraction tables")
    if fits is None:
        raise SchemaError("phase-diagram family needs the fits CSV")
    fig, (ax_f, ax_w) = plt.subplots(1, 2, figsize=(8.4, 3.0))
    colors = style["curve_colors"]
    for k, frac in enumerate(sorted(fractions, key=lambda t: t.tau)):
        color = colors[k % len(colors)]
        ax_f.scatter(frac.theta / math.pi, frac.fraction, s=style["marker_size"],
                     color=color, label=f"tau = {frac.tau * 1e6:g} us")
        digest.add(f"fractions:{frac.tau!r}", frac.theta, frac.fraction)
        row = np.where(np.isclose(fits.tau, frac.tau))[0]
        if len(row) and np.isfinite(fits.amplitude[row[0]]):
            j = row[0]
            grid = np.linspace(frac.theta.min(), frac.theta.max(), 256)
            model = fits.amplitude[j] * np.exp(
                -((grid - fits.center[j]) ** 2) / (2 * fits.sigma[j] ** 2)
            )
            ax_f.plot(grid / math.pi, model, color=color, lw=1.0)
            digest.add(f"fitcurve:{frac.tau!r}", grid, model)
    ax_f.axhline(float(fits.meta.get("cutoff", 0.1)), ls=":", color=style["line_color"])
    ax_f.set_xlabel(r"$\theta/\pi$")
    ax_f.set_ylabel("crystalline fraction $f$")
    if fractions:
        ax_f.legend(fontsize=7)

    finite = np.isfinite(fits.width)
    ax_w.loglog(fits.wtau_reference[finite], fits.width[finite], "o-",
                color=colors[0], label="fitted half-width")
    ax_w.loglog(fits.wtau_reference[finite], fits.wtau_reference[finite],
                ls="--", color=style["boundary_dash_color"], label=r"$|\theta-\pi| = W\tau$")
    ax_w.set_xlabel(r"$W\tau$ (rad)")
    ax_w.set_ylabel(r"region half-width (rad)")
    ax_w.legend(fontsize=7)
    digest.add("widths", fits.wtau_reference[finite], fits.width[finite])
    fig.tight_layout()
    return fig


def _render_echo(inputs, style, digest):
    """Forward decay plus unwrapping scans, with predicted-maximum markers."""
    forward = None
    scans = []
    for path in inputs:
        table = io.classify_and_read(path)
        if not isinstance(table, io.RecordTable):
            raise SchemaError(f"{path}: echo figures take record CSVs only")
        if table.meta.get("kind") == "echo_scan":
            scans.append(table)
        else:
            forward = table
    if not scans:
        raise SchemaError("echo family needs at least one echo-scan record")
    fig, ax = plt.subplots(figsize=(5.2, 3.2))
    if forward is not None:
        ax.plot(forward.cycles, np.abs(forward.mz), color=style["line_color"],
                lw=1.0, label="forward drive")
        digest.add("forward", forward.cycles, forward.mz)
    colors = style["curve_colors"]
    for k, scan in enumerate(sorted(scans, key=lambda t: int(t.meta.get("n_forward", 0)))):
        n_fwd = int(scan.meta.get("n_forward", 0))
        color = colors[k % len(colors)]
        x = n_fwd + scan.cycles  # total block count
        ax.plot(x, np.abs(scan.mz), "o-", ms=3.5, color=color, label=f"N = {n_fwd}")
        # predicted maximum at N' = N, i.e. total 2N
        ax.axvline(2 * n_fwd, color=color, lw=0.8, ls=":")
        digest.add(f"echo:{n_fwd}", scan.cycles, scan.mz)
    ax.set_xlabel("total blocks $N + N'$")
    ax.set_ylabel("$|M_z|$")
    ax.legend(fontsize=7)
    fig.tight_layout()
    return fig


def _render_decay(inputs, style, digest):
    """Phase-pair records on one axes with the cosine-power envelope overlay."""
    records = []
    envelope = None
    for path in inputs:
        table = io.classify_and_read(path)
        if isinstance(table, io.RecordTable):
            records.append(table)
        elif isinstance(table, io.EnvelopeTable):
            envelope = table
        else:
            raise SchemaError(f"{path}: decay figures take records and an envelope CSV")
    if not records:
        raise SchemaError("decay family needs at least one record input")
    fig, ax = plt.subplots(figsize=(5.2, 3.2))
    colors = style["curve_colors"]
    for k, rec in enumerate(records):
        label = rec.meta.get("extra", rec.meta.get("theta", Path(rec.path).stem))
        ax.plot(rec.cycles, np.abs(rec.mz), "o-", ms=3.0,
                color=colors[k % len(colors)], label=str(label))
        digest.add(f"decay:{Path(rec.path).name}", rec.cycles, rec.mz)
    if envelope is not None:
        ax.plot(envelope.cycles, envelope.values, color=style["envelope_color"],
                lw=1.4, label="cosine envelope")
        digest.add("envelope", envelope.cycles, envelope.values)
    ax.set_xlabel("block $N$")
    ax.set_ylabel("$|M_z|$")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7)
    fig.tight_layout()
    return fig


_FAMILY_RENDERERS = {
    "timeseries": _render_timeseries,
    "phasediagram": _render_phasediagram,
    "echo": _render_echo,
    "decay": _render_decay,
}
