"""Gate compilation into optical pulse sequences.

Gates act on qubits stored in the |0>/|1> hyperfine levels.  Conditional gates
use the excited-state interaction: exciting a control ion shifts the target's
optical lines by Delta, and pulses placed at the shifted frequency act only
when the control is excited.

Each :class:`CompiledGate` records the ideal matrix it implements on a stated
computational subspace.  Subspace patterns are integers whose bit ``q`` is the
level (0 or 1) of ``sites[q]``; every other ion sits in |0>.

This module also contains :func:`ideal_sequence_unitary`, a closed-form model
of perfectly selective pulses (projector-conditioned rotations).  It shares no
code with the dynamics integrator and serves as its oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from ..model import TRANSITIONS, ClusterSpec
from .dynamics import E
from .pulses import Envelope, Pulse, pi_pulse, rotation

__all__ = [
    "UncompilableGate",
    "CompiledGate",
    "compile_not",
    "compile_hadamard",
    "compile_cnot",
    "compile_ccnot",
    "compile_swap7",
    "compile_beamsplitter",
    "cnot_on",
    "ccnot_on",
    "swap7_on",
    "beamsplitter_on",
    "ideal_pulse_unitary",
    "ideal_sequence_unitary",
    "embed_pattern",
    "offresonant_phase",
    "SWAP7_NOTE",
]

SWAP7_NOTE = (
    "On the double-storage state |11> the sequence leaves the computational "
    "space: the final state is i|e>_A|1>_B, i.e. ion A remains optically excited."
)


class UncompilableGate(ValueError):
    """The requested conditional gate needs an interaction that is zero."""


@dataclass(frozen=True, eq=False)
class CompiledGate:
    name: str
    pulses: tuple[Pulse, ...]
    sites: tuple[int, ...]
    ideal: np.ndarray
    subspace: tuple[int, ...]
    notes: str = ""

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))
        object.__setattr__(self, "sites", tuple(int(s) for s in self.sites))
        ideal = np.asarray(self.ideal, dtype=complex)
        d = len(self.subspace)
        if ideal.shape != (d, d):
            raise ValueError(f"ideal matrix must be {d}x{d}")
        ideal.setflags(write=False)
        object.__setattr__(self, "ideal", ideal)

    @property
    def duration(self) -> float:
        return float(sum(p.duration for p in self.pulses))

    def phase_map(self) -> dict[int, complex]:
        """Phase picked up by each subspace pattern under the ideal action,
        for gates whose ideal matrix is a permutation with phases."""
        out = {}
        for c, pattern in enumerate(self.subspace):
            col = self.ideal[:, c]
            r = int(np.argmax(np.abs(col)))
            out[pattern] = complex(col[r])
        return out

    def embedded_ideal(self, n_sites: int) -> tuple[list[int], np.ndarray]:
        """Full-space basis indices of the subspace and the ideal matrix."""
        return [embed_pattern(p, self.sites) for p in self.subspace], self.ideal


def embed_pattern(pattern: int, sites: Sequence[int], background: Mapping[int, int] | None = None) -> int:
    """Basis index of a computational pattern with other ions in their background level."""
    levels = dict(background or {})
    for q, s in enumerate(sites):
        levels[s] = (pattern >> q) & 1
    return int(sum(l * 4**s for s, l in levels.items()))


def _require_nonzero(delta: float, what: str) -> None:
    if not np.isfinite(delta) or delta == 0:
        raise UncompilableGate(f"{what} has zero interaction; the conditional pulse cannot be addressed")


def _full_subspace(k: int) -> tuple[int, ...]:
    return tuple(range(2**k))


def _x() -> np.ndarray:
    return np.array([[0, 1], [1, 0]], dtype=complex)


def offresonant_phase(rabi: float, duration: float, detuning: float) -> float:
    """Phase acquired by the ground state of a two-level system driven off resonance.

    Evaluated in the frame where the ground state has zero energy; the
    population left behind is ignored.
    """
    H = np.array([[0.0, rabi / 2], [rabi / 2, -detuning]], dtype=complex)
    return float(np.angle(scipy.linalg.expm(-2j * np.pi * H * duration)[0, 0]))


def _not_pulses(site, rabi, shift=(), theta=0.0, envelope=None):
    """Three pi pulses implementing e^{i theta} X on one ion's qubit levels."""
    return [
        pi_pulse(site, "0e", math.pi + theta, rabi=rabi, shift=shift, envelope=envelope),
        pi_pulse(site, "1e", 0.0, rabi=rabi, shift=shift, envelope=envelope),
        pi_pulse(site, "0e", -math.pi - theta, rabi=rabi, shift=shift, envelope=envelope),
    ]


def compile_not(site: int, rabi: float = 1.0, envelope: Envelope | None = None) -> CompiledGate:
    """Three pi pulses 0-e, 1-e, 0-e; |aux> is untouched."""
    return CompiledGate("not", tuple(_not_pulses(site, rabi, envelope=envelope)), (site,), _x(), _full_subspace(1))


def compile_hadamard(site: int, rabi: float = 1.0, envelope: Envelope | None = None) -> CompiledGate:
    """pi on 1-e, pi/2 on 0-e with phase pi, pi on 1-e.

    The pi/2 rotation mixes |0> with |e>, which holds the former |1>
    amplitude; the outer pulses move |1> in and out of |e>.
    """
    pulses = (
        pi_pulse(site, "1e", 0.0, rabi=rabi, envelope=envelope),
        rotation(site, "0e", math.pi / 2, math.pi, rabi=rabi, envelope=envelope),
        pi_pulse(site, "1e", 0.0, rabi=rabi, envelope=envelope),
    )
    h = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
    return CompiledGate("hadamard", pulses, (site,), h, _full_subspace(1))


def _cnot_matrix() -> np.ndarray:
    # patterns: bit0 = control, bit1 = target
    M = np.zeros((4, 4), dtype=complex)
    for p in range(4):
        c, t = p & 1, (p >> 1) & 1
        M[c | ((t ^ c) << 1), p] = 1
    return M


def _ccnot_matrix() -> np.ndarray:
    M = np.zeros((8, 8), dtype=complex)
    for p in range(8):
        a, b, t = p & 1, (p >> 1) & 1, (p >> 2) & 1
        M[a | (b << 1) | ((t ^ (a & b)) << 2), p] = 1
    return M


def _not_branch_phase(rabi, delta):
    """Mean phase on the target qubit levels when the shifted NOT misses it by ``delta``."""
    a = offresonant_phase(rabi, 1.0 / (2 * rabi), delta)
    # |0> sees the two 0-e pulses, |1> the single 1-e pulse
    return 1.5 * a


def compile_cnot(
    control: int,
    target: int,
    delta: float,
    rabi: float = 1.0,
    *,
    compensate_stark: bool = False,
    envelope: Envelope | None = None,
) -> CompiledGate:
    """CNOT: excite the control from |1>, run a NOT on the target at the
    carrier shifted by ``delta``, then return the control with phase pi.

    With ``compensate_stark`` the target NOT carries an extra phase equal to
    the mean light shift the off-resonant branch picks up, so both control
    branches leave with matching phases.  This matters only when the drive
    model keeps off-resonant couplings.
    """
    _require_nonzero(delta, f"pair ({control}, {target})")
    if control == target:
        raise ValueError("control and target must differ")
    theta = _not_branch_phase(rabi, delta) if compensate_stark else 0.0
    pulses = (
        [pi_pulse(control, "1e", 0.0, rabi=rabi, envelope=envelope)]
        + _not_pulses(target, rabi, ((control, delta),), theta, envelope)
        + [pi_pulse(control, "1e", math.pi, rabi=rabi, envelope=envelope)]
    )
    return CompiledGate("cnot", tuple(pulses), (control, target), _cnot_matrix(), _full_subspace(2))


def compile_ccnot(
    c1: int,
    c2: int,
    target: int,
    deltas: Mapping[tuple[int, int], float],
    rabi: float = 1.0,
    *,
    compensate_stark: bool = False,
    envelope: Envelope | None = None,
) -> CompiledGate:
    """Toffoli gate: both controls are excited from |1>, the target NOT sits at
    the summed shift of both controls, then the controls are returned.

    ``deltas`` maps site pairs (either order) to interactions.  If the two
    controls interact, the second control's transition depends on the first
    one, so its pulses are issued at both the bare and the shifted carrier.
    """
    def get(i, j):
        return float(deltas.get((i, j), deltas.get((j, i), 0.0)))

    d1, d2, d12 = get(c1, target), get(c2, target), get(c1, c2)
    _require_nonzero(d1, f"pair ({c1}, {target})")
    _require_nonzero(d2, f"pair ({c2}, {target})")
    _require_nonzero(d1 + d2, "summed control shift")
    if len({c1, c2, target}) != 3:
        raise ValueError("CCNOT needs three distinct sites")

    b1 = b2 = theta = 0.0
    if compensate_stark:
        m = {
            (x1, x2): _not_branch_phase(rabi, d1 + d2 - x1 * d1 - x2 * d2)
            for x1 in (0, 1) for x2 in (0, 1) if (x1, x2) != (1, 1)
        }
        b1 = m[0, 0] - m[1, 0]
        b2 = m[0, 0] - m[0, 1]
        theta = m[0, 0] - b1 - b2

    def c2_pulses(phase):
        out = [pi_pulse(c2, "1e", phase, rabi=rabi, envelope=envelope)]
        if d12 != 0:
            out.append(pi_pulse(c2, "1e", phase, rabi=rabi, shift=((c1, d12),), envelope=envelope))
        return out

    pulses = (
        [pi_pulse(c1, "1e", 0.0, rabi=rabi, envelope=envelope)]
        + c2_pulses(0.0)
        + _not_pulses(target, rabi, ((c1, d1), (c2, d2)), theta, envelope)
        + c2_pulses(math.pi - b2)
        + [pi_pulse(c1, "1e", math.pi - b1, rabi=rabi, envelope=envelope)]
    )
    return CompiledGate("ccnot", tuple(pulses), (c1, c2, target), _ccnot_matrix(), _full_subspace(3))


def _swap_like(a, b, delta, rabi, middle, envelope):
    cond_a = ((b, delta),)
    cond_b = ((a, delta),)
    return (
        pi_pulse(b, "1e", 0.0, rabi=rabi, envelope=envelope),
        pi_pulse(a, "1e", 0.0, rabi=rabi, envelope=envelope),
        pi_pulse(a, "0e", 0.0, rabi=rabi, shift=cond_a, envelope=envelope),
        middle(cond_b),
        pi_pulse(a, "0e", 0.0, rabi=rabi, shift=cond_a, envelope=envelope),
        pi_pulse(b, "1e", 0.0, rabi=rabi, envelope=envelope),
        pi_pulse(a, "1e", 0.0, rabi=rabi, envelope=envelope),
    )


# Patterns of the vacuum-plus-single-excitation space: bit0 = A, bit1 = B.
_SWAP_SUBSPACE = (0b00, 0b01, 0b10)


def compile_swap7(a: int, b: int, delta: float, rabi: float = 1.0, envelope: Envelope | None = None) -> CompiledGate:
    """Seven-pulse SWAP of the |1> excitation between ions ``a`` and ``b``.

    Application order: pi 1-e on B, pi 1-e on A, then controlled pi 0-e pulses
    on A, B, A (each at the carrier shifted by the partner's interaction),
    then pi 1-e on B and A.  All pulses have phase 0.  The ideal action is an
    exact SWAP with unit phases on |00>, |10>, |01>.
    """
    _require_nonzero(delta, f"pair ({a}, {b})")
    pulses = _swap_like(a, b, delta, rabi, lambda cond: pi_pulse(b, "0e", 0.0, rabi=rabi, shift=cond, envelope=envelope), envelope)
    ideal = np.array([[1, 0, 0], [0, 0, 1], [0, 1, 0]], dtype=complex)
    return CompiledGate("swap7", pulses, (a, b), ideal, _SWAP_SUBSPACE, SWAP7_NOTE)


def beamsplitter_matrix(theta: float, phi: float) -> np.ndarray:
    """Ideal action of :func:`compile_beamsplitter` on (|00>, |10>, |01>)."""
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array(
        [
            [1, 0, 0],
            [0, -c, s * np.exp(-1j * phi)],
            [0, s * np.exp(1j * phi), c],
        ],
        dtype=complex,
    )


def compile_beamsplitter(
    a: int, b: int, delta: float, theta: float, phi: float = 0.0, rabi: float = 1.0, envelope: Envelope | None = None
) -> CompiledGate:
    """The seven-pulse SWAP with its central pulse replaced by a rotation of
    angle ``theta`` and phase ``phi``; ``theta = pi/2`` splits an excitation
    evenly between the two ions."""
    _require_nonzero(delta, f"pair ({a}, {b})")
    if not 0 < theta <= 2 * math.pi:
        raise ValueError("rotation angle must lie in (0, 2*pi]")
    pulses = _swap_like(
        a, b, delta, rabi,
        lambda cond: rotation(b, "0e", theta, phi, rabi=rabi, shift=cond, envelope=envelope),
        envelope,
    )
    return CompiledGate(
        "beamsplitter", pulses, (a, b), beamsplitter_matrix(theta, phi), _SWAP_SUBSPACE,
        SWAP7_NOTE.replace("sequence", "sequence at theta = pi") if theta == math.pi else "",
    )


def _delta(cluster: ClusterSpec, i: int, j: int) -> float:
    return cluster.delta(i, j)


def cnot_on(cluster: ClusterSpec, control: int, target: int, rabi: float = 1.0, **kw) -> CompiledGate:
    return compile_cnot(control, target, _delta(cluster, control, target), rabi, **kw)


def ccnot_on(cluster: ClusterSpec, c1: int, c2: int, target: int, rabi: float = 1.0, **kw) -> CompiledGate:
    deltas = {(c1, target): _delta(cluster, c1, target), (c2, target): _delta(cluster, c2, target),
              (c1, c2): _delta(cluster, c1, c2)}
    return compile_ccnot(c1, c2, target, deltas, rabi, **kw)


def swap7_on(cluster: ClusterSpec, a: int, b: int, rabi: float = 1.0, **kw) -> CompiledGate:
    return compile_swap7(a, b, _delta(cluster, a, b), rabi, **kw)


def beamsplitter_on(cluster: ClusterSpec, a: int, b: int, theta: float, phi: float = 0.0, rabi: float = 1.0, **kw):
    return compile_beamsplitter(a, b, _delta(cluster, a, b), theta, phi, rabi, **kw)


def ideal_pulse_unitary(cluster: ClusterSpec, pulse: Pulse, tol: float = 5.0) -> np.ndarray:
    """Perfectly selective action of one pulse.

    For every configuration of the other ions the addressed transition's
    frequency is the bare line plus the interactions with excited neighbours.
    When that frequency is within ``tol`` MHz of the carrier the pair (g, e) of
    the addressed ion is rotated by R(area, phase); otherwise nothing happens.
    """
    n = len(cluster)
    for s in pulse.sites():
        if not 0 <= s < n:
            raise ValueError(f"pulse references site {s}, cluster has {n} sites")
    site = cluster.sites[pulse.site]
    g = TRANSITIONS[pulse.transition]
    carrier = site.transition_freq(pulse.transition) + pulse.carrier_offset
    th = pulse.area
    c, s = math.cos(th / 2), math.sin(th / 2)
    eip = complex(math.cos(pulse.phase), math.sin(pulse.phase))
    dim = 4**n
    U = np.eye(dim, dtype=complex)
    stride = 4**pulse.site
    for idx in range(dim):
        levels = [(idx // 4**k) % 4 for k in range(n)]
        if levels[pulse.site] != g:
            continue
        freq = site.transition_freq(pulse.transition) + sum(
            cluster.interaction[pulse.site, k] for k in range(n) if k != pulse.site and levels[k] == E
        )
        if abs(freq - carrier) > tol:
            continue
        j = idx + (E - g) * stride
        U[idx, idx] = c
        U[j, j] = c
        U[j, idx] = -1j * s * eip
        U[idx, j] = -1j * s * np.conj(eip)
    return U


def ideal_sequence_unitary(cluster: ClusterSpec, pulses: Sequence[Pulse], tol: float = 5.0) -> np.ndarray:
    U = np.eye(4 ** len(cluster), dtype=complex)
    for p in pulses:
        U = ideal_pulse_unitary(cluster, p, tol) @ U
    return U
