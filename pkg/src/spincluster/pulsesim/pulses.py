"""Optical pulse descriptions and their line-oriented text format.

A pulse drives one ground->|e> transition of one site.  Its carrier sits at the
site's nominal transition frequency plus ``detuning`` plus the interaction
shifts listed in ``shift_condition``; the latter is how a pulse is made
conditional on neighbouring ions being excited.

Rotation convention: a pulse of area ``theta`` and phase ``phi`` on a resonant
two-level pair acts as

    R(theta, phi) = cos(theta/2) I - i sin(theta/2) (e^{i phi}|e><g| + e^{-i phi}|g><e|)

and a rectangular pulse has area ``2*pi*rabi*duration``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from ..model import TRANSITIONS

__all__ = [
    "Rectangular",
    "Gaussian",
    "Envelope",
    "Pulse",
    "pi_pulse",
    "rotation",
    "format_sequence",
    "parse_sequence",
    "sequence_duration",
]


@dataclass(frozen=True)
class Rectangular:
    def shape(self, t: np.ndarray, duration: float) -> np.ndarray:
        return np.ones_like(np.asarray(t, dtype=float))

    def area_factor(self, duration: float) -> float:
        """Integral of the shape over the pulse, in units of duration."""
        return 1.0

    def token(self) -> str:
        return "rect"


@dataclass(frozen=True)
class Gaussian:
    """Gaussian envelope centred in the pulse window, truncated at its edges."""

    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"Gaussian sigma must be positive, got {self.sigma}")

    def shape(self, t, duration):
        t = np.asarray(t, dtype=float)
        return np.exp(-0.5 * ((t - duration / 2.0) / self.sigma) ** 2)

    def area_factor(self, duration):
        z = duration / (2.0 * math.sqrt(2.0) * self.sigma)
        return self.sigma * math.sqrt(2.0 * math.pi) * math.erf(z) / duration

    def token(self):
        return f"gauss:{self.sigma!r}"


Envelope = Union[Rectangular, Gaussian]


@dataclass(frozen=True)
class Pulse:
    """One optical pulse.

    ``rabi`` is the peak Rabi frequency (MHz) on the target transition, and
    ``duration`` is in microseconds.  ``shift_condition`` is a tuple of
    ``(site, delta_mhz)`` pairs whose deltas are added to the carrier.
    """

    site: int
    transition: str
    rabi: float
    duration: float
    phase: float = 0.0
    detuning: float = 0.0
    envelope: Envelope = Rectangular()
    shift_condition: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        if self.transition not in TRANSITIONS:
            raise ValueError(f"unknown transition {self.transition!r}")
        if not (self.rabi >= 0 and math.isfinite(self.rabi)):
            raise ValueError(f"rabi frequency must be non-negative, got {self.rabi}")
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise ValueError(f"duration must be positive, got {self.duration}")
        cond = tuple(sorted((int(s), float(d)) for s, d in self.shift_condition))
        if len({s for s, _ in cond}) != len(cond):
            raise ValueError("shift condition lists a site twice")
        object.__setattr__(self, "shift_condition", cond)
        object.__setattr__(self, "site", int(self.site))

    @property
    def ground(self) -> int:
        return TRANSITIONS[self.transition]

    @property
    def area(self) -> float:
        """Rotation angle (radians) on a resonant transition."""
        return 2.0 * math.pi * self.rabi * self.duration * self.envelope.area_factor(self.duration)

    @property
    def carrier_offset(self) -> float:
        """Carrier minus the site's nominal transition frequency (MHz)."""
        return self.detuning + sum(d for _, d in self.shift_condition)

    def sites(self) -> set[int]:
        return {self.site} | {s for s, _ in self.shift_condition}


def _shift_tuple(shift) -> tuple[tuple[int, float], ...]:
    if shift is None:
        return ()
    if isinstance(shift, dict):
        return tuple(shift.items())
    return tuple(shift)


def rotation(
    site: int,
    transition: str,
    theta: float,
    phase: float = 0.0,
    *,
    rabi: float = 1.0,
    shift=None,
    detuning: float = 0.0,
    envelope: Envelope | None = None,
    duration: float | None = None,
) -> Pulse:
    """Pulse of rotation angle ``theta`` on a resonant transition.

    For a Gaussian envelope ``duration`` fixes the window and the peak Rabi
    frequency is chosen to give the requested area; otherwise ``rabi`` is the
    (peak) Rabi frequency and the duration follows.
    """
    if theta <= 0:
        raise ValueError("rotation angle must be positive")
    envelope = envelope or Rectangular()
    if isinstance(envelope, Gaussian):
        dur = duration if duration is not None else 8.0 * envelope.sigma
        peak = theta / (2 * math.pi * dur * envelope.area_factor(dur))
        return Pulse(site, transition, peak, dur, phase, detuning, envelope, _shift_tuple(shift))
    if rabi <= 0:
        raise ValueError("rabi frequency must be positive")
    dur = theta / (2 * math.pi * rabi)
    return Pulse(site, transition, rabi, dur, phase, detuning, envelope, _shift_tuple(shift))


def pi_pulse(site, transition, phase=0.0, *, rabi=1.0, shift=None, detuning=0.0, envelope=None):
    """pi pulse; for a rectangular envelope ``rabi * duration == 1/2``."""
    return rotation(site, transition, math.pi, phase, rabi=rabi, shift=shift, detuning=detuning, envelope=envelope)


def sequence_duration(pulses: Iterable[Pulse]) -> float:
    return float(sum(p.duration for p in pulses))


def _format_pulse(p: Pulse) -> str:
    fields = [
        str(p.site),
        p.transition,
        repr(float(p.detuning)),
        repr(float(p.rabi)),
        repr(float(p.duration)),
        repr(float(p.phase)),
        p.envelope.token(),
    ]
    if p.shift_condition:
        fields.append("shift:" + ",".join(f"{s}={d!r}" for s, d in p.shift_condition))
    return " ".join(fields)


def format_sequence(pulses: Sequence[Pulse]) -> str:
    """One pulse per line: ``site transition detuning rabi duration phase envelope [shift:s=d,...]``."""
    return "".join(_format_pulse(p) + "\n" for p in pulses)


def _parse_envelope(tok: str) -> Envelope:
    if tok == "rect":
        return Rectangular()
    if tok.startswith("gauss:"):
        return Gaussian(float(tok.split(":", 1)[1]))
    raise ValueError(f"unknown envelope {tok!r}")


def parse_sequence(text: str) -> list[Pulse]:
    """Inverse of :func:`format_sequence`.  Blank lines and ``#`` comments are skipped."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) not in (7, 8):
            raise ValueError(f"line {lineno}: expected 7 or 8 fields, got {len(tok)}")
        shift = ()
        if len(tok) == 8:
            if not tok[7].startswith("shift:"):
                raise ValueError(f"line {lineno}: eighth field must start with 'shift:'")
            pairs = []
            for item in tok[7][len("shift:"):].split(","):
                s, d = item.split("=")
                pairs.append((int(s), float(d)))
            shift = tuple(pairs)
        try:
            out.append(
                Pulse(
                    site=int(tok[0]),
                    transition=tok[1],
                    detuning=float(tok[2]),
                    rabi=float(tok[3]),
                    duration=float(tok[4]),
                    phase=float(tok[5]),
                    envelope=_parse_envelope(tok[6]),
                    shift_condition=shift,
                )
            )
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return out
