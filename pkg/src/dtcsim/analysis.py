"""Derived quantities from evolution records: spectra, crystalline
fraction, Gaussian fits and region boundaries, decay envelopes and times,
and echo peak location.

Spectral convention (fixed, version "onesided-v1"): discrete Fourier
transform of the windowed real samples, one-sided bins k = 0..L/2 at
normalized frequency nu_tilde = k/L.  ``amplitude`` stores the raw DFT
coefficient; ``power`` is |S_k|^2/L with interior bins doubled so that the
total equals sum |s_n|^2 over the window (Parseval).  The DC bin is
included in totals and no mean subtraction or taper is applied unless
requested.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .spinsys import ConfigError

SPECTRUM_CONVENTION = "onesided-v1"
ANALYSIS_FORMAT_VERSION = 1


class AnalysisError(ValueError):
    """Input does not admit the requested analysis."""


class FitError(RuntimeError):
    """Least-squares fit failed to converge or the data are degenerate."""


@dataclass(frozen=True)
class Spectrum:
    """One-sided power spectrum of a stroboscopic record."""

    nu_tilde: np.ndarray        # k/L for k = 0..L/2
    amplitude: np.ndarray       # complex DFT coefficients
    power: np.ndarray           # folded power, sums to sum |s_n|^2
    window: tuple[int, int]     # (start sample, length)
    convention: str = SPECTRUM_CONVENTION

    @property
    def nyquist_power(self) -> float:
        return float(self.power[-1])

    def two_sided(self) -> tuple[np.ndarray, np.ndarray]:
        """Mirror the one-sided bins onto the full grid nu_tilde in [0, 1).

        Useful for locating beat peaks symmetric about nu_tilde = 1/2; for a
        real signal the mirrored half carries the conjugate amplitudes.
        """
        length = self.window[1]
        nu = np.arange(length) / length
        amp = np.concatenate([self.amplitude, self.amplitude[-2:0:-1].conj()])
        return nu, amp


def _window_values(values, window):
    values = np.asarray(values, dtype=float)
    n = len(values)
    if window is None:
        length = n - (n % 2)
        window = (0, length)
    start, length = window
    if length < 4 or length % 2 != 0:
        raise AnalysisError(f"window length must be even and >= 4, got {length}")
    if start < 0 or start + length > n:
        raise AnalysisError(f"window {window} does not fit a record of {n} samples")
    return values[start : start + length], (start, length)


def spectrum(record, window: tuple[int, int] | None = None, *,
             subtract_mean: bool = False, taper: str | None = None,
             pad_to: int | None = None) -> Spectrum:
    """One-sided DFT spectrum of a record (or plain value array).

    ``window`` is (start, length) in samples; default is the longest even
    prefix of the whole record.  Options deviate from the fixed default
    convention and exist because the fraction-versus-angle shape is known
    to depend on them; in particular zero-padding (``pad_to``) redistributes
    the Nyquist-bin fraction and is never applied implicitly.
    """
    values = getattr(record, "mz", record)
    seg, window = _window_values(values, window)
    if subtract_mean:
        seg = seg - seg.mean()
    if taper is not None:
        if taper != "hann":
            raise AnalysisError(f"unsupported taper {taper!r}")
        seg = seg * np.hanning(len(seg))
    if pad_to is not None:
        if pad_to < len(seg) or pad_to % 2 != 0:
            raise AnalysisError("pad_to must be an even length >= the window")
        seg = np.concatenate([seg, np.zeros(pad_to - len(seg))])
        window = (window[0], pad_to)
    length = len(seg)
    coeff = np.fft.rfft(seg)
    fold = np.full(length // 2 + 1, 2.0)
    fold[0] = 1.0
    fold[-1] = 1.0
    power = fold * np.abs(coeff) ** 2 / length
    nu = np.arange(length // 2 + 1) / length
    return Spectrum(nu, coeff, power, window)


def crystalline_fraction(spec: Spectrum) -> float:
    """Fraction of total spectral power in the nu_tilde = 1/2 bin."""
    total = float(np.sum(spec.power))
    if total <= 0.0:
        raise AnalysisError("total spectral power is zero; fraction undefined")
    return spec.nyquist_power / total


@dataclass(frozen=True)
class GaussianFit:
    amplitude: float
    center: float
    sigma: float
    residual: float         # sum of squared residuals
    iterations: int

    def value(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.amplitude * np.exp(-((theta - self.center) ** 2) / (2 * self.sigma**2))

    def r_squared(self, theta, f) -> float:
        f = np.asarray(f, dtype=float)
        ss_tot = float(np.sum((f - f.mean()) ** 2))
        if ss_tot == 0.0:
            return 0.0
        return 1.0 - self.residual / ss_tot


def fit_gaussian(theta, f, *, grad_tol: float = 1e-10, max_iter: int = 200) -> GaussianFit:
    """Deterministic damped Gauss-Newton fit of f(theta) to a Gaussian.

    Initialization: amplitude = max f, center = argmax, sigma from the
    half-maximum width.  Iterates Levenberg-damped normal equations until
    the gradient norm of the least-squares objective falls under
    ``grad_tol`` or ``max_iter`` is reached, whichever comes first;
    identical inputs give bit-identical parameters.  FitError means genuine
    failure: degenerate data, non-finite parameters, or a final gradient
    far from stationary (roundoff in the residuals puts the practical
    gradient floor above ``grad_tol`` for some data; that still counts as
    converged).
    """
    theta = np.asarray(theta, dtype=float)
    f = np.asarray(f, dtype=float)
    if theta.shape != f.shape or theta.ndim != 1:
        raise AnalysisError("theta grid and f values must be equal-length vectors")
    if len(theta) < 5:
        raise AnalysisError("need at least 5 grid points to fit")
    if float(f.max() - f.min()) < 1e-12:
        raise FitError("degenerate flat data: nothing to fit")

    k = int(np.argmax(f))
    a0, c0 = float(f[k]), float(theta[k])
    half = a0 / 2.0
    above = np.where(f >= half)[0]
    span = theta[above[-1]] - theta[above[0]] if len(above) >= 2 else 0.0
    if span <= 0.0:
        span = (theta[-1] - theta[0]) / 4.0
    s0 = max(float(span) / 2.3548200450309493, 1e-6 * (abs(theta[-1] - theta[0]) + 1.0))

    p = np.array([a0, c0, s0])
    lam = 1e-3

    def residuals(params):
        a, c, s = params
        g = np.exp(-((theta - c) ** 2) / (2 * s**2))
        r = a * g - f
        jac = np.column_stack([
            g,
            a * g * (theta - c) / s**2,
            a * g * (theta - c) ** 2 / s**3,
        ])
        return r, jac

    r, jac = residuals(p)
    rss = float(r @ r)
    iterations = 0
    stalled = False
    for iterations in range(1, max_iter + 1):
        grad = jac.T @ r
        if float(np.linalg.norm(grad)) <= grad_tol:
            break
        jtj = jac.T @ jac
        accepted = False
        for _ in range(25):
            damped = jtj + lam * np.diag(np.diag(jtj))
            try:
                step = np.linalg.solve(damped, -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            candidate = p + step
            candidate[2] = abs(candidate[2])
            if candidate[2] == 0.0:
                lam *= 10.0
                continue
            r_new, jac_new = residuals(candidate)
            rss_new = float(r_new @ r_new)
            if rss_new <= rss:
                p, r, jac, rss = candidate, r_new, jac_new, rss_new
                lam = max(lam / 10.0, 1e-15)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            stalled = True
            break

    grad_norm = float(np.linalg.norm(jac.T @ r))
    # sanity scale: a gradient far from stationary relative to the data
    # signals divergence, not a roundoff floor
    scale = max(1.0, float(np.abs(jac).max()) * math.sqrt(max(rss, 1e-30)))
    if not np.all(np.isfinite(p)) or grad_norm > 1e-5 * scale:
        state = "stalled" if stalled else f"hit {max_iter} iterations"
        raise FitError(
            f"fit {state} away from a stationary point "
            f"(gradient norm {grad_norm:.3e}, rss {rss:.3e})"
        )
    return GaussianFit(float(p[0]), float(p[1]), float(abs(p[2])), rss, iterations)


@dataclass(frozen=True)
class CrystalFitEntry:
    """One interaction-time slice of the fraction-versus-angle map."""

    tau: float
    thetas: np.ndarray
    fractions: np.ndarray
    fit: GaussianFit | None
    width: float | None          # half-width in theta at the cutoff
    note: str = ""


@dataclass(frozen=True)
class CrystalFit:
    entries: tuple[CrystalFitEntry, ...]
    cutoff: float = 0.1


def region_half_width(fit: GaussianFit, cutoff: float = 0.1) -> float:
    """Half-width in theta where the fitted Gaussian crosses the cutoff.

    Zero when the fitted amplitude does not reach the cutoff (empty region
    marker, not an error).
    """
    if fit.amplitude <= cutoff:
        return 0.0
    return fit.sigma * math.sqrt(2.0 * math.log(fit.amplitude / cutoff))


def boundary_reference(w_scale: float, tau) -> np.ndarray:
    """Overlay line |theta - pi| = W tau for the region boundary plots."""
    return w_scale * np.asarray(tau, dtype=float)


@dataclass(frozen=True)
class EnvelopeModel:
    """Per-cycle cosine reduction envelope |cos eps|^N."""

    epsilon: float
    values: np.ndarray          # N = 0..n_max

    @property
    def cycles(self) -> np.ndarray:
        return np.arange(len(self.values))


def cosine_power_envelope(epsilon: float, n_max: int) -> EnvelopeModel:
    if n_max < 1:
        raise AnalysisError("n_max must be >= 1")
    n = np.arange(n_max + 1)
    return EnvelopeModel(float(epsilon), np.abs(math.cos(epsilon)) ** n)


def decay_time(record) -> float:
    """First cycle where |M_z| falls below 1/e (linear interpolation).

    Works on the magnitude, so alternating-sign records are handled
    without explicit sign correction; returns inf when the magnitude never
    crosses (first-crossing convention for non-monotone envelopes).
    """
    values = np.abs(np.asarray(getattr(record, "mz", record), dtype=float))
    cycles = getattr(record, "cycles", np.arange(len(values)))
    cycles = np.asarray(cycles, dtype=float)
    if values[0] < 1.0 - 1e-6:
        raise AnalysisError("decay time expects a record normalized to start at 1")
    target = 1.0 / math.e
    below = np.where(values < target)[0]
    if len(below) == 0:
        return math.inf
    k = int(below[0])
    if k == 0:
        return float(cycles[0])
    x0, x1 = cycles[k - 1], cycles[k]
    y0, y1 = values[k - 1], values[k]
    return float(x0 + (y0 - target) / (y0 - y1) * (x1 - x0))


@dataclass(frozen=True)
class EchoPeak:
    location: float      # interpolated block count of the maximum
    amplitude: float
    offset: float        # location - expected block count


def echo_peak(n_values, mz_values, expected: int) -> EchoPeak | None:
    """Locate the echo maximum by quadratic interpolation around argmax.

    Returns None (no-echo marker) when the magnitude has no interior
    maximum among the sampled points.
    """
    n_values = np.asarray(n_values, dtype=float)
    mag = np.abs(np.asarray(mz_values, dtype=float))
    if len(n_values) < 3:
        raise AnalysisError("need at least 3 points around the candidate peak")
    k = int(np.argmax(mag))
    if k == 0 or k == len(mag) - 1:
        return None
    x = n_values[k - 1 : k + 2]
    y = mag[k - 1 : k + 2]
    coeffs = np.polyfit(x - x[1], y, 2)
    a, b, c = coeffs
    if a >= 0:
        return None
    xv = -b / (2 * a)
    peak = float(x[1] + xv)
    amp = float(c - b**2 / (4 * a))
    return EchoPeak(peak, amp, peak - float(expected))


# ---------------------------------------------------------------------------
# File output
# ---------------------------------------------------------------------------


def spectrum_csv_text(spec: Spectrum, meta: dict | None = None) -> str:
    lines = [f"# format_version={ANALYSIS_FORMAT_VERSION}",
             f"# convention={spec.convention}",
             f"# window_start={spec.window[0]}",
             f"# window_length={spec.window[1]}"]
    for key in sorted(meta or {}):
        lines.append(f"# {key}={meta[key]}")
    lines.append("nu_tilde,re,im,power")
    for k in range(len(spec.nu_tilde)):
        lines.append(
            f"{float(spec.nu_tilde[k])!r},{float(spec.amplitude[k].real)!r},"
            f"{float(spec.amplitude[k].imag)!r},{float(spec.power[k])!r}"
        )
    return "\n".join(lines) + "\n"


def fit_csv_text(crystal: CrystalFit, w_scale: float, meta: dict | None = None) -> str:
    """Per-tau fit table: parameters, boundary width, and the W*tau overlay."""
    lines = [f"# format_version={ANALYSIS_FORMAT_VERSION}",
             f"# cutoff={crystal.cutoff!r}",
             f"# w_scale_rad_s={float(w_scale)!r}"]
    for key in sorted(meta or {}):
        lines.append(f"# {key}={meta[key]}")
    lines.append("tau,A,theta0,sigma,residual,width,wtau_reference")
    for e in crystal.entries:
        if e.fit is None:
            lines.append(f"{float(e.tau)!r},,,,,,{float(w_scale * e.tau)!r}")
        else:
            lines.append(
                f"{float(e.tau)!r},{e.fit.amplitude!r},{e.fit.center!r},{e.fit.sigma!r},"
                f"{e.fit.residual!r},{float(e.width)!r},{float(w_scale * e.tau)!r}"
            )
    return "\n".join(lines) + "\n"


def fraction_csv_text(tau: float, thetas, fractions, meta: dict | None = None) -> str:
    lines = [f"# format_version={ANALYSIS_FORMAT_VERSION}", f"# tau={float(tau)!r}"]
    for key in sorted(meta or {}):
        lines.append(f"# {key}={meta[key]}")
    lines.append("theta,f")
    for th, fv in zip(thetas, fractions):
        lines.append(f"{float(th)!r},{float(fv)!r}")
    return "\n".join(lines) + "\n"


def write_spectrum_csv(spec: Spectrum, path, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(spectrum_csv_text(spec, meta))


def write_fit_csv(crystal: CrystalFit, w_scale: float, path, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(fit_csv_text(crystal, w_scale, meta))


def write_fraction_csv(tau: float, thetas, fractions, path, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(fraction_csv_text(tau, thetas, fractions, meta))


def write_summary_json(payload: dict, path) -> None:
    doc = {"format_version": ANALYSIS_FORMAT_VERSION}
    doc.update(payload)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)!r}")
