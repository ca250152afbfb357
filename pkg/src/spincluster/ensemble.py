"""Ensembles of cluster instances: feature preparation, distillation, readout.

Every cluster instance has one ion per qubit site, and each ion's optical line
is offset by an inhomogeneous detuning.  Preparing a qubit feature keeps the
ions whose detuning falls inside a narrow window (initialised to |0>) and
shelves the rest in |aux>.  Distillation then discards, site by site, the
clusters that miss a feature at some other qubit site, so that every surviving
cluster holds a complete, mutually interacting register.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import lineshapes
from .model import ClusterSpec
from .pulsesim.dynamics import ClusterModel, ClusterState, DriveModel, NoiseParams, evolve, evolve_batch
from .pulsesim.pulses import Pulse

__all__ = [
    "UNPREPARED",
    "IN_FEATURE",
    "TRENCH",
    "DISCARDED",
    "CLASS_NAMES",
    "UnsupportedRegime",
    "ZeroYieldWarning",
    "EnsembleSpec",
    "EnsembleState",
    "Readout",
    "sample_detunings",
    "prepare_feature",
    "prepare_all",
    "distill",
    "pair_classes",
    "yield_estimate",
    "apply_gate_ensemble",
    "readout",
    "write_steps_csv",
    "write_readout_csv",
]

UNPREPARED, IN_FEATURE, TRENCH, DISCARDED = 0, 1, 2, 3
CLASS_NAMES = {UNPREPARED: "unprepared", IN_FEATURE: "in-feature", TRENCH: "trench-shelved", DISCARDED: "discarded"}


class UnsupportedRegime(ValueError):
    """Distillation needs the pair interaction to exceed the feature width."""


class ZeroYieldWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EnsembleSpec:
    """``line_width`` is Gamma_inh and ``feature_width`` Gamma_q, both full
    widths in MHz (FWHM for Gaussian and Lorentzian lines, full support for the
    top-hat line)."""

    n_clusters: int
    n_sites: int = 2
    line_width: float = 20.0
    feature_width: float = 1.0
    distribution: str = "gaussian"
    seed: int = 0
    symmetry_factor: int = 1

    def __post_init__(self):
        if int(self.n_clusters) < 1:
            raise ValueError("n_clusters must be at least 1")
        if int(self.n_sites) < 1:
            raise ValueError("n_sites must be at least 1")
        if self.distribution not in lineshapes.LINESHAPES:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.line_width < 0:
            raise ValueError("line_width must be non-negative")
        if not self.feature_width > 0:
            raise ValueError("feature_width must be positive")
        if self.line_width > 0 and self.feature_width > self.line_width:
            raise ValueError(
                f"feature_width {self.feature_width} exceeds line_width {self.line_width}"
            )
        if int(self.symmetry_factor) < 1:
            raise ValueError("symmetry_factor must be a positive integer")


@dataclass(frozen=True, eq=False)
class EnsembleState:
    """Per-cluster detunings and population classes.

    ``classes`` has shape (n_clusters, n_sites) with the codes above.
    ``amplitudes`` holds state vectors (or density matrices after noisy
    gates) of the surviving clusters, rows following ``survivor_ids``, once a
    gate has been applied; before that every survivor is in its prepared
    ground state.
    """

    spec: EnsembleSpec
    detunings: np.ndarray
    classes: np.ndarray
    steps: tuple[tuple[int, str, int, Mapping[str, int]], ...] = ()
    survivor_ids: np.ndarray | None = None
    amplitudes: np.ndarray | None = None
    time: float = 0.0
    notes: tuple[str, ...] = ()

    @property
    def n_clusters(self) -> int:
        return self.classes.shape[0]

    @property
    def n_sites(self) -> int:
        return self.classes.shape[1]

    def counts(self, site: int) -> dict[str, int]:
        col = self.classes[:, site]
        return {CLASS_NAMES[k]: int(np.count_nonzero(col == k)) for k in CLASS_NAMES}

    def in_feature(self, site: int) -> np.ndarray:
        return self.classes[:, site] == IN_FEATURE

    def survivors(self) -> np.ndarray:
        """Indices of clusters that are in-feature at every qubit site."""
        return np.flatnonzero(np.all(self.classes == IN_FEATURE, axis=1))

    def _log(self, label: str, site: int, **kw) -> "EnsembleState":
        new = replace(self, **kw)
        step = (len(self.steps), label, site, new.counts(site))
        return replace(new, steps=self.steps + (step,))


def sample_detunings(spec: EnsembleSpec) -> EnsembleState:
    """Draw i.i.d. detunings for every cluster and site; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(1)[0])
    det = lineshapes.sample(spec.distribution, spec.line_width, (spec.n_clusters, spec.n_sites), rng)
    classes = np.full((spec.n_clusters, spec.n_sites), UNPREPARED, dtype=np.int8)
    return EnsembleState(spec, det, classes)


def prepare_feature(
    state: EnsembleState, site: int, feature_center: float = 0.0, feature_width: float | None = None
) -> EnsembleState:
    """Burn a trench around the feature at ``site``.

    Ions within +/- width/2 of ``feature_center`` become in-feature (in |0>),
    the rest are shelved in |aux>.  Discarded ions stay discarded.  A window
    that catches no ion emits :class:`ZeroYieldWarning` and records a note.
    """
    width = state.spec.feature_width if feature_width is None else feature_width
    if not width > 0:
        raise ValueError("feature width must be positive")
    if state.spec.line_width > 0 and width > state.spec.line_width:
        raise ValueError(f"feature width {width} exceeds line width {state.spec.line_width}")
    if not 0 <= site < state.n_sites:
        raise IndexError(f"site {site} out of range")
    classes = state.classes.copy()
    col = classes[:, site]
    inside = np.abs(state.detunings[:, site] - feature_center) <= width / 2
    keep = col != DISCARDED
    col[keep & inside] = IN_FEATURE
    col[keep & ~inside] = TRENCH
    notes = state.notes
    if not np.any(col == IN_FEATURE):
        msg = f"feature at site {site} (center {feature_center} MHz) contains no ions"
        warnings.warn(msg, ZeroYieldWarning, stacklevel=2)
        notes = notes + (msg,)
    return state._log("prepare", site, classes=classes, notes=notes, survivor_ids=None, amplitudes=None)


def prepare_all(state: EnsembleState, centers: Sequence[float] | None = None, widths: Sequence[float] | None = None):
    for s in range(state.n_sites):
        state = prepare_feature(
            state, s, 0.0 if centers is None else centers[s], None if widths is None else widths[s]
        )
    return state


def _pair_delta(interactions, a, b) -> float:
    if isinstance(interactions, ClusterSpec):
        return abs(interactions.delta(a, b))
    if isinstance(interactions, np.ndarray):
        return abs(float(interactions[a, b]))
    return abs(float(interactions.get((a, b), interactions.get((b, a), 0.0))))


def distill(
    state: EnsembleState,
    interactions: ClusterSpec | np.ndarray | Mapping[tuple[int, int], float],
    pairs: Iterable[tuple[int, int]] | None = None,
    *,
    feature_width: float | None = None,
) -> EnsembleState:
    """Run distillation passes over ordered site pairs (default: all of them).

    A pass (A, B) excites the in-feature ions at A; the ions at B that stay
    unshifted belong to clusters whose A ion is missing, and are shelved
    (discarded at B).  Every pair needs |Delta_AB| > Gamma_q.  For
    ``symmetry_factor`` g > 1 each site's in-feature set is also thinned to a
    1/g fraction the first time the site is distilled, standing for the
    discarding of symmetry-equivalent partners.
    """
    gq = state.spec.feature_width if feature_width is None else feature_width
    n = state.n_sites
    pairs = [(a, b) for a in range(n) for b in range(n) if a != b] if pairs is None else list(pairs)
    for a, b in pairs:
        if a == b or not (0 <= a < n and 0 <= b < n):
            raise ValueError(f"invalid site pair ({a}, {b})")
        d = _pair_delta(interactions, a, b)
        if d <= gq:
            raise UnsupportedRegime(
                f"interaction {d} MHz between sites {a} and {b} does not exceed the feature width {gq} MHz"
            )
    classes = state.classes.copy()
    g = int(state.spec.symmetry_factor)
    thinned = set()
    rng = np.random.default_rng(np.random.SeedSequence(state.spec.seed).spawn(2)[1])
    steps = list(state.steps)
    for a, b in pairs:
        if g > 1:
            for s in (a, b):
                if s not in thinned:
                    thinned.add(s)
                    idx = np.flatnonzero(classes[:, s] == IN_FEATURE)
                    drop = idx[rng.random(idx.size) >= 1.0 / g]
                    classes[drop, s] = DISCARDED
        lost = (classes[:, b] == IN_FEATURE) & (classes[:, a] != IN_FEATURE)
        classes[lost, b] = DISCARDED
        col = classes[:, b]
        steps.append((len(steps), f"distill {a}->{b}", b,
                      {CLASS_NAMES[k]: int(np.count_nonzero(col == k)) for k in CLASS_NAMES}))
    return replace(state, classes=classes, steps=tuple(steps), survivor_ids=None, amplitudes=None)


def pair_classes(state: EnsembleState, a: int, b: int) -> dict[str, int]:
    """Counts of the three cluster types that matter to the pair (A, B):
    X has features at both sites, Y only at A, Z only at B."""
    fa, fb = state.in_feature(a), state.in_feature(b)
    return {
        "X": int(np.count_nonzero(fa & fb)),
        "Y": int(np.count_nonzero(fa & ~fb)),
        "Z": int(np.count_nonzero(~fa & fb)),
    }


def yield_estimate(feature_width: float, line_width: float, n_qubits: int) -> float:
    """Fraction of first-qubit clusters kept after distilling n qubits:
    (Gamma_q / Gamma_inh)^(n - 1)."""
    if not 0 < feature_width <= line_width:
        raise ValueError("need 0 < feature_width <= line_width")
    if n_qubits < 1:
        raise ValueError("n_qubits must be at least 1")
    return (feature_width / line_width) ** (n_qubits - 1)


def apply_gate_ensemble(
    state: EnsembleState,
    pulses: Sequence[Pulse],
    cluster: ClusterSpec,
    noise: NoiseParams | None = None,
    drive: DriveModel | None = None,
) -> EnsembleState:
    """Run a pulse sequence on every surviving cluster with its own detunings."""
    if len(cluster) != state.n_sites:
        raise ValueError(f"cluster has {len(cluster)} sites, ensemble has {state.n_sites}")
    ids = state.survivors()
    model = ClusterModel(cluster, drive or DriveModel())
    if state.amplitudes is None or state.survivor_ids is None or not np.array_equal(ids, state.survivor_ids):
        amps = np.zeros((ids.size, model.dim), dtype=complex)
        amps[:, 0] = 1.0  # prepared survivors have every ion in |0>
        time = 0.0
    else:
        amps = state.amplitudes
        time = state.time
    det = state.detunings[ids]
    if (noise is not None and noise.enabled) or amps.ndim == 3:
        # density matrices, one cluster at a time
        out = []
        for k in range(ids.size):
            st = ClusterState(amps[k], time)
            mk = model.with_detunings(det[k])
            for p in pulses:
                st = evolve(st, p, mk, noise)
            out.append(st.density_matrix)
        amps = np.array(out).reshape(ids.size, model.dim, model.dim)
    else:
        amps = evolve_batch(model, pulses, det, amps, time)
    duration = float(sum(p.duration for p in pulses))
    return replace(state, survivor_ids=ids, amplitudes=amps, time=time + duration)


@dataclass(frozen=True)
class Readout:
    site: int
    signal: float
    survivors: int
    detectable: bool


def readout(
    state: EnsembleState,
    site: int,
    detection_min_ions: float = 1e4,
    *,
    shot_noise: bool = False,
    seed: int | None = None,
) -> Readout:
    """Ensemble signal sum over survivors of <P1 - P0> at ``site``.

    With ``shot_noise`` the |1> and |0> contributions are replaced by Poisson
    draws with those means.
    """
    ids = state.survivors()
    if state.amplitudes is None or state.survivor_ids is None or not np.array_equal(ids, state.survivor_ids):
        p1 = 0.0
        p0 = float(ids.size)
    else:
        n = state.n_sites
        levels = (np.arange(4**n) // 4**site) % 4
        amps = state.amplitudes
        pops = np.abs(amps) ** 2 if amps.ndim == 2 else np.einsum("kii->ki", amps).real
        p1 = float(pops[:, levels == 1].sum())
        p0 = float(pops[:, levels == 0].sum())
    if shot_noise:
        rng = np.random.default_rng(np.random.SeedSequence(state.spec.seed if seed is None else seed).spawn(3)[2])
        p1, p0 = float(rng.poisson(p1)), float(rng.poisson(p0))
    return Readout(site, p1 - p0, int(ids.size), bool(ids.size >= detection_min_ions))


def write_steps_csv(state: EnsembleState, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["step", "site", "class", "count"])
    for idx, label, site, counts in state.steps:
        for name, cnt in counts.items():
            w.writerow([f"{idx}:{label}", site, name, cnt])


def write_readout_csv(results: Iterable[Readout], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["site", "signal", "survivors", "detectable"])
    for r in results:
        w.writerow([r.site, repr(r.signal), r.survivors, str(r.detectable).lower()])
