"""Pulse programs as data: delays, pulses, and sampling markers.

Programs are flat, pre-expanded event tuples.  Phases are radians in the
transverse plane (x = 0, y = pi/2); a barred pulse is the same positive
angle at phase + pi, i.e. a rotation in the opposite sense.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .spinsys import ConfigError

PHASE_X = 0.0
PHASE_Y = math.pi / 2.0
PHASE_XBAR = math.pi
PHASE_YBAR = 3.0 * math.pi / 2.0

_PHASE_BY_NAME = {"x": PHASE_X, "y": PHASE_Y, "-x": PHASE_XBAR, "-y": PHASE_YBAR}

ANGLE_CONSISTENCY_TOL = 1e-12


@dataclass(frozen=True)
class Delay:
    duration: float  # seconds

    def __post_init__(self):
        if self.duration < 0 or not math.isfinite(self.duration):
            raise ConfigError(f"delay duration must be >= 0, got {self.duration}")


@dataclass(frozen=True)
class Pulse:
    phase: float          # rad, transverse plane
    angle: float          # rad, nominal rotation angle
    duration: float       # s; 0 for an ideal (delta) pulse
    amplitude: float      # rad/s; 0 for an ideal pulse
    species: str = "P"

    def __post_init__(self):
        if self.duration < 0:
            raise ConfigError("pulse duration must be >= 0")
        if self.duration == 0.0:
            if self.amplitude != 0.0:
                raise ConfigError("ideal pulses carry zero amplitude by convention")
        else:
            if abs(self.amplitude * self.duration - self.angle) > ANGLE_CONSISTENCY_TOL * max(1.0, abs(self.angle)):
                raise ConfigError(
                    f"amplitude*duration = {self.amplitude * self.duration!r} "
                    f"does not match angle {self.angle!r}"
                )

    @property
    def is_ideal(self) -> bool:
        return self.duration == 0.0


@dataclass(frozen=True)
class Sample:
    """Marker: record the normalized z magnetization here."""

    index: int  # cycle/block counter the sample belongs to


PulseEvent = Delay | Pulse | Sample


@dataclass(frozen=True)
class PulseParams:
    """How pulses are realized: rf amplitude and/or fixed duration.

    Exactly one of the two conventions drives the nominal rotations:
    ``fixed_duration`` keeps t_p constant (amplitude = angle / t_p per
    pulse); otherwise the amplitude is fixed and t_p = angle / amplitude.
    ``amplitude`` is always required for spin-locking bursts, whose duration
    is dictated by the sequence, not by the rotation angle.
    """

    amplitude: float                 # rad/s
    fixed_duration: float | None = None   # s, for ordinary pulses
    species: str = "P"

    def __post_init__(self):
        if self.amplitude <= 0:
            raise ConfigError("pulse amplitude must be positive")
        if self.fixed_duration is not None and self.fixed_duration <= 0:
            raise ConfigError("fixed pulse duration must be positive")

    def pulse(self, phase: float, angle: float, mode: str) -> Pulse:
        if angle < 0:
            raise ConfigError("pulse angles are kept positive; flip the phase instead")
        if mode == "delta":
            return Pulse(phase, angle, 0.0, 0.0, self.species)
        if self.fixed_duration is not None:
            return Pulse(phase, angle, self.fixed_duration, angle / self.fixed_duration, self.species)
        return Pulse(phase, angle, angle / self.amplitude, self.amplitude, self.species)

    def lock_pulse(self, phase: float, duration: float) -> Pulse:
        # spin-locking burst: finite in every mode, angle follows duration
        return Pulse(phase, self.amplitude * duration, duration, self.amplitude, self.species)

    def nominal_duration(self, angle: float, mode: str) -> float:
        if mode == "delta":
            return 0.0
        if self.fixed_duration is not None:
            return self.fixed_duration
        return angle / self.amplitude


@dataclass(frozen=True)
class PulseProgram:
    """Flat event list plus the stroboscopic period between samples."""

    events: tuple[PulseEvent, ...]
    floquet_period: float     # s; sampling period of the repeating unit
    mode: str                 # "delta" | "finite"
    kind: str = "custom"

    def __post_init__(self):
        if self.mode not in ("delta", "finite"):
            raise ConfigError(f"mode must be delta or finite, got {self.mode!r}")
        if self.floquet_period < 0:
            raise ConfigError("floquet period must be >= 0")

    @property
    def total_duration(self) -> float:
        return sum(getattr(e, "duration", 0.0) for e in self.events)

    @property
    def sample_count(self) -> int:
        return sum(isinstance(e, Sample) for e in self.events)


def _check_common(tau: float, n_cycles: int, mode: str):
    if tau < 0 or not math.isfinite(tau):
        raise ConfigError(f"tau must be >= 0, got {tau}")
    if n_cycles < 1:
        raise ConfigError(f"cycle count must be >= 1, got {n_cycles}")
    if mode not in ("delta", "finite"):
        raise ConfigError(f"mode must be delta or finite, got {mode!r}")


def dtc_program(tau: float, theta: float, n_cycles: int, mode: str, pulse: PulseParams) -> PulseProgram:
    """The basic drive: n_cycles repetitions of [wait tau, rotate theta about x].

    The magnetization is sampled after every pulse; the experiment's final
    readout rotation is intentionally absent (M_z is read directly from the
    state).
    """
    _check_common(tau, n_cycles, mode)
    events: list[PulseEvent] = []
    for n in range(1, n_cycles + 1):
        events.append(Delay(tau))
        events.append(pulse.pulse(PHASE_X, theta, mode))
        events.append(Sample(n))
    period = tau + pulse.nominal_duration(theta, mode)
    return PulseProgram(tuple(events), period, mode, "dtc")


def echo_program(
    tau: float,
    theta: float,
    n_forward: int,
    n_reverse: int,
    mode: str,
    pulse: PulseParams,
) -> PulseProgram:
    """Forward drive for n_forward cycles, then the unwrapping segment.

    Structure: {tau - X_theta}^N - X_{pi/2} - {Xbar_theta - Y_lock}^N' -
    Xbar_{pi/2} - Sample.  The y spin-locking burst always has finite
    duration 2*tau at the configured rf amplitude (its whole point is
    simultaneous rf + internal evolution), so tau = 0 is rejected here.
    The forward cycles carry their usual samples; the one sample after the
    closing pulse is the echo point for this n_reverse.
    """
    _check_common(tau, max(n_forward, 1), mode)
    if tau == 0.0:
        raise ConfigError("echo sequence needs tau > 0 (the y burst has duration 2*tau)")
    if n_forward < 0 or n_reverse < 0:
        raise ConfigError("cycle counts must be >= 0")
    events: list[PulseEvent] = []
    for n in range(1, n_forward + 1):
        events.append(Delay(tau))
        events.append(pulse.pulse(PHASE_X, theta, mode))
        events.append(Sample(n))
    events.append(pulse.pulse(PHASE_X, math.pi / 2, mode))
    for _ in range(n_reverse):
        events.append(pulse.pulse(PHASE_XBAR, theta, mode))
        events.append(pulse.lock_pulse(PHASE_Y, 2.0 * tau))
    events.append(pulse.pulse(PHASE_XBAR, math.pi / 2, mode))
    events.append(Sample(n_forward + n_reverse))
    period = tau + pulse.nominal_duration(theta, mode)
    return PulseProgram(tuple(events), period, mode, "echo")


def phase_pair_program(tau: float, alpha: str, beta: str, n_blocks: int, mode: str, pulse: PulseParams) -> PulseProgram:
    """Repeated two-pulse blocks {tau - alpha_pi - tau - beta_pi}, sampled per block."""
    _check_common(tau, n_blocks, mode)
    phases = []
    for name in (alpha, beta):
        key = str(name).lower()
        if key not in ("x", "y"):
            raise ConfigError(f"phase-pair pulses must be x or y, got {name!r}")
        phases.append(_PHASE_BY_NAME[key])
    events: list[PulseEvent] = []
    for n in range(1, n_blocks + 1):
        events.append(Delay(tau))
        events.append(pulse.pulse(phases[0], math.pi, mode))
        events.append(Delay(tau))
        events.append(pulse.pulse(phases[1], math.pi, mode))
        events.append(Sample(n))
    period = 2.0 * (tau + pulse.nominal_duration(math.pi, mode))
    return PulseProgram(tuple(events), period, mode, "phase_pair")


# ---------------------------------------------------------------------------
# Text serialization (golden-file friendly)
# ---------------------------------------------------------------------------

PROGRAM_FORMAT_VERSION = 1


def program_to_text(program: PulseProgram) -> str:
    lines = [
        f"# pulseprogram v{PROGRAM_FORMAT_VERSION}",
        f"mode = {program.mode}",
        f"kind = {program.kind}",
        f"floquet_period = {program.floquet_period!r}",
    ]
    for e in program.events:
        if isinstance(e, Delay):
            lines.append(f"delay {e.duration!r}")
        elif isinstance(e, Pulse):
            lines.append(
                f"pulse phase={e.phase!r} angle={e.angle!r} duration={e.duration!r} "
                f"amplitude={e.amplitude!r} species={e.species}"
            )
        else:
            lines.append(f"sample {e.index}")
    return "\n".join(lines) + "\n"


def program_from_text(text: str) -> PulseProgram:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# pulseprogram v"):
        raise ConfigError("not a pulse program dump")
    if lines[0] != f"# pulseprogram v{PROGRAM_FORMAT_VERSION}":
        raise ConfigError(f"unsupported pulse program version: {lines[0]!r}")
    header = {}
    events: list[PulseEvent] = []
    for ln in lines[1:]:
        if "=" in ln and not ln.startswith(("delay", "pulse", "sample")):
            key, _, value = ln.partition("=")
            header[key.strip()] = value.strip()
            continue
        tok = ln.split()
        if tok[0] == "delay":
            events.append(Delay(float(tok[1])))
        elif tok[0] == "pulse":
            kv = dict(part.split("=", 1) for part in tok[1:])
            events.append(
                Pulse(
                    float(kv["phase"]), float(kv["angle"]), float(kv["duration"]),
                    float(kv["amplitude"]), kv.get("species", "P"),
                )
            )
        elif tok[0] == "sample":
            events.append(Sample(int(tok[1])))
        else:
            raise ConfigError(f"unknown program line {ln!r}")
    return PulseProgram(
        tuple(events),
        float(header["floquet_period"]),
        header["mode"],
        header.get("kind", "custom"),
    )
