"""Average gate fidelity of compiled pulse sequences.

The average fidelity over a d-dimensional subspace with projector P and ideal
unitary V is computed from the channel outputs on the operator basis,

    F = ( sum_i Tr[P E(|i><i|)] + sum_ij <i|V^dag E(|i><j|) V|j> ) / (d (d + 1)),

which reduces to the usual formula for unitary channels and counts any
population leaving the subspace as error.  It is insensitive to a global phase
and to nothing else: per-state phases are part of the ideal matrix.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .. import lineshapes
from ..model import ClusterSpec
from .compiler import CompiledGate, embed_pattern
from .dynamics import ClusterModel, DriveModel, NoiseParams, apply_pulse_channel, propagate_columns
from .pulses import Pulse

__all__ = [
    "FidelityResult",
    "average_fidelity",
    "channel_fidelity",
    "gate_fidelity",
    "sample_detuning_set",
    "fidelity_sweep",
    "write_sweep_csv",
]


@dataclass(frozen=True)
class FidelityResult:
    mean: float
    values: np.ndarray
    stderr: float

    @property
    def infidelity(self) -> float:
        return 1.0 - self.mean


def average_fidelity(M: np.ndarray, V: np.ndarray) -> float:
    """Average fidelity of a (possibly leaky) block ``M`` against unitary ``V``."""
    d = V.shape[0]
    return float((np.vdot(M, M).real + abs(np.trace(V.conj().T @ M)) ** 2) / (d * (d + 1)))


def channel_fidelity(outputs: Mapping[tuple[int, int], np.ndarray], idx: Sequence[int], V: np.ndarray) -> float:
    """Average fidelity from channel outputs ``outputs[i, j] = E(|idx_i><idx_j|)``."""
    d = len(idx)
    idx = list(idx)
    pop = sum(np.trace(outputs[i, i][np.ix_(idx, idx)]).real for i in range(d))
    coh = sum(V[:, i].conj() @ outputs[i, j][np.ix_(idx, idx)] @ V[:, j] for i in range(d) for j in range(d))
    return float((pop + np.real(coh)) / (d * (d + 1)))


def _one_fidelity(model, pulses, idx, V, noise):
    if noise is None or not noise.enabled:
        cols = np.zeros((model.dim, len(idx)), dtype=complex)
        cols[idx, range(len(idx))] = 1.0
        M = propagate_columns(model, pulses, cols)[idx, :]
        return average_fidelity(M, V)
    d = len(idx)
    vecs = np.zeros((model.dim * model.dim, d * d), dtype=complex)
    for a, ia in enumerate(idx):
        for b, ib in enumerate(idx):
            vecs[ia * model.dim + ib, a * d + b] = 1.0
    t = 0.0
    for p in pulses:
        vecs = apply_pulse_channel(model, p, noise, vecs, t)
        t += p.duration
    outputs = {(a, b): vecs[:, a * d + b].reshape(model.dim, model.dim) for a in range(d) for b in range(d)}
    return channel_fidelity(outputs, idx, V)


def sample_detuning_set(kind: str, width: float, n_samples: int, n_sites: int, seed: int) -> np.ndarray:
    """``(n_samples, n_sites)`` array of independent inhomogeneous detunings."""
    rng = np.random.default_rng(seed)
    return lineshapes.sample(kind, width, (n_samples, n_sites), rng)


def gate_fidelity(
    gate: CompiledGate | Sequence[Pulse],
    cluster: ClusterSpec,
    *,
    ideal: np.ndarray | None = None,
    sites: Sequence[int] | None = None,
    subspace: Sequence[int] | None = None,
    noise: NoiseParams | None = None,
    drive: DriveModel | None = None,
    detuning_samples: np.ndarray | None = None,
    background: Mapping[int, int] | None = None,
) -> FidelityResult:
    """Average gate fidelity, averaged again over sampled detunings.

    ``gate`` is a :class:`CompiledGate` or a plain pulse list together with
    ``ideal``, ``sites`` and optionally ``subspace``.  ``detuning_samples``
    holds one row of per-site detunings per sample; without it a single
    sample with zero detuning is used.  Ions outside ``sites`` start in their
    ``background`` level (default |0>).
    """
    if isinstance(gate, CompiledGate):
        pulses = gate.pulses
        ideal = gate.ideal if ideal is None else ideal
        sites = gate.sites if sites is None else sites
        subspace = gate.subspace if subspace is None else subspace
    else:
        pulses = tuple(gate)
        if ideal is None or sites is None:
            raise ValueError("a bare pulse sequence needs both ideal and sites")
        subspace = tuple(range(2 ** len(sites))) if subspace is None else subspace
    V = np.asarray(ideal, dtype=complex)
    if V.shape[0] < 2 or V.shape != (len(subspace), len(subspace)):
        raise ValueError("ideal matrix must be square, at least 2x2, and match the subspace")
    idx = [embed_pattern(p, sites, background) for p in subspace]
    base = ClusterModel(cluster, drive or DriveModel())
    samples = np.zeros((1, len(cluster))) if detuning_samples is None else np.atleast_2d(detuning_samples)
    vals = np.array([_one_fidelity(base.with_detunings(row), pulses, idx, V, noise) for row in samples])
    stderr = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return FidelityResult(float(vals.mean()), vals, stderr)


def fidelity_sweep(
    gate_factory: Callable[[float], CompiledGate],
    cluster: ClusterSpec,
    omegas: Iterable[float],
    sigma: float = 0.0,
    *,
    n_samples: int = 1,
    noise: NoiseParams | None = None,
    drive: DriveModel | None = None,
    seed: int = 0,
) -> list[dict]:
    """Fidelity against Rabi frequency under Gaussian detunings of standard
    deviation ``sigma``; the same draws are reused at every Rabi frequency."""
    samples = None
    if sigma > 0:
        samples = sample_detuning_set("gaussian", sigma * lineshapes.FWHM_PER_SIGMA, n_samples, len(cluster), seed)
    rows = []
    for om in omegas:
        res = gate_fidelity(gate_factory(float(om)), cluster, noise=noise, drive=drive, detuning_samples=samples)
        rows.append({"omega_mhz": float(om), "sigma_mhz": float(sigma), "mean_fidelity": res.mean, "stderr": res.stderr})
    return rows


def write_sweep_csv(rows: Iterable[Mapping], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["omega_mhz", "sigma_mhz", "mean_fidelity", "stderr"])
    for r in rows:
        w.writerow([repr(r["omega_mhz"]), repr(r["sigma_mhz"]), repr(r["mean_fidelity"]), repr(r["stderr"])])
