"""Quantum dynamics of one cluster under a sequence of optical pulses.

Units are MHz and microseconds; a Hamiltonian ``H`` generates ``exp(-2j*pi*H*t)``.

Basis states are indexed little-endian by site with four levels per ion,
``index = sum_k level_k * 4**k`` and levels ordered (|0>, |1>, |aux>, |e>).

States are stored in the interaction picture of the static (diagonal)
Hamiltonian, so an idle cluster does not change.  Each pulse is evaluated in
the frame co-rotating with its own carrier, where the Hamiltonian is
time-independent for rectangular envelopes; converting back into the
interaction picture needs the absolute start time, which every state carries.
The laser phase of every pulse is referenced to t = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import expm_multiply

from ..model import ClusterSpec
from .pulses import Gaussian, Pulse

__all__ = [
    "MAX_IONS",
    "E",
    "NumericalFailure",
    "UnknownSiteError",
    "NoiseParams",
    "DriveModel",
    "ClusterModel",
    "ClusterState",
    "basis_index",
    "hamiltonian",
    "pulse_unitary",
    "evolve",
    "run_sequence",
    "propagate_columns",
    "sequence_unitary",
    "apply_pulse_channel",
    "evolve_batch",
]

MAX_IONS = 6
E = 3  # level index of the optically excited state


class NumericalFailure(RuntimeError):
    """An integrator failed to reach its tolerance or broke trace preservation."""


class UnknownSiteError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseParams:
    """Lindblad rates given as times in microseconds; ``inf`` disables a channel.

    ``optical_T2`` and ``spin_T2`` are the pure-dephasing coherence times of the
    optical (g-e) and spin (0-1) coherences; ``excited_lifetime`` is the |e>
    population lifetime, with decay split over the ground levels by branching.
    """

    optical_T2: float = math.inf
    spin_T2: float = math.inf
    excited_lifetime: float = math.inf

    def __post_init__(self):
        for name in ("optical_T2", "spin_T2", "excited_lifetime"):
            v = getattr(self, name)
            if not v > 0:
                raise ValueError(f"{name} must be positive or inf, got {v}")

    @property
    def enabled(self) -> bool:
        return any(math.isfinite(v) for v in (self.optical_T2, self.spin_T2, self.excited_lifetime))


NOISELESS = NoiseParams()


@dataclass(frozen=True)
class DriveModel:
    """Which couplings a pulse produces.

    Every ground->|e> coupling of every ion whose detuning from the carrier is
    within ``window`` MHz is included, weighted by branching.  With
    ``hyperfine_leakage`` off only the addressed transition is driven and with
    ``spectator_sites`` off only the addressed site is driven.
    :meth:`ideal` keeps just the addressed, near-resonant transition, which
    makes every compiled gate exact.
    """

    window: float = 1000.0
    hyperfine_leakage: bool = True
    spectator_sites: bool = True

    def __post_init__(self):
        if not self.window > 0:
            raise ValueError("drive window must be positive")

    @classmethod
    def ideal(cls, window: float = 5.0) -> "DriveModel":
        return cls(window=window, hyperfine_leakage=False, spectator_sites=False)


def basis_index(levels: Sequence[int]) -> int:
    return int(sum(int(l) * 4**k for k, l in enumerate(levels)))


class ClusterModel:
    """Precomputed static energies and level tables for one cluster instance.

    ``detunings`` adds a per-site inhomogeneous offset (MHz) to the optical
    transitions; the laser carriers are unaffected and always aim at the
    nominal frequencies.
    """

    def __init__(self, cluster: ClusterSpec, drive: DriveModel | None = None, detunings=None):
        n = len(cluster)
        if n > MAX_IONS:
            raise ValueError(f"at most {MAX_IONS} ions can be simulated, cluster has {n}")
        self.cluster = cluster
        self.drive = drive or DriveModel()
        self.n = n
        self.dim = 4**n
        det = np.zeros(n) if detunings is None else np.asarray(detunings, dtype=float)
        if det.shape != (n,):
            raise ValueError(f"need one detuning per site ({n}), got shape {det.shape}")
        self.detunings = det
        idx = np.arange(self.dim)
        self.levels = np.stack([(idx // 4**k) % 4 for k in range(n)], axis=1)
        excited = self.levels == E
        self.n_excited = excited.sum(axis=1)
        energies = np.zeros(self.dim)
        for k, site in enumerate(cluster.sites):
            ion = np.append(site.level_scheme.ground_energies(),
                            site.satellite_shift + site.level_scheme.freq_0e + det[k])
            energies += ion[self.levels[:, k]]
        inter = cluster.interaction
        for i in range(n):
            for j in range(i + 1, n):
                if inter[i, j]:
                    energies += inter[i, j] * (excited[:, i] & excited[:, j])
        self.energies = energies

    def with_detunings(self, detunings) -> "ClusterModel":
        return ClusterModel(self.cluster, self.drive, detunings)

    def with_drive(self, drive: DriveModel) -> "ClusterModel":
        return ClusterModel(self.cluster, drive, self.detunings)

    def check_pulse(self, pulse: Pulse) -> None:
        for s in pulse.sites():
            if not 0 <= s < self.n:
                raise UnknownSiteError(f"pulse references site {s}, cluster has {self.n} sites")

    def carrier(self, pulse: Pulse) -> float:
        self.check_pulse(pulse)
        return self.cluster.sites[pulse.site].transition_freq(pulse.transition) + pulse.carrier_offset

    def couplings(self, pulse: Pulse):
        """Arrays (lower, upper, amplitude, detuning) of the driven basis pairs.

        ``amplitude`` is the coupling's Rabi frequency at envelope peak and
        ``detuning`` the carrier minus the pair's energy difference.
        """
        nu = self.carrier(pulse)
        b_target = self.cluster.sites[pulse.site].level_scheme.branching[pulse.ground]
        if b_target <= 0:
            raise ValueError(f"transition {pulse.transition} of site {pulse.site} has no oscillator strength")
        lo, up, amp, det = [], [], [], []
        sites = range(self.n) if self.drive.spectator_sites else (pulse.site,)
        for k in sites:
            branching = self.cluster.sites[k].level_scheme.branching
            grounds = range(3) if self.drive.hyperfine_leakage else (pulse.ground,)
            for g in grounds:
                if branching[g] == 0:
                    continue
                i = np.flatnonzero(self.levels[:, k] == g)
                j = i + (E - g) * 4**k
                d = nu - (self.energies[j] - self.energies[i])
                keep = np.abs(d) <= self.drive.window
                if not keep.any():
                    continue
                lo.append(i[keep])
                up.append(j[keep])
                det.append(d[keep])
                amp.append(np.full(keep.sum(), pulse.rabi * math.sqrt(branching[g] / b_target)))
        if not lo:
            z = np.zeros(0, dtype=int)
            return z, z, np.zeros(0), np.zeros(0)
        return np.concatenate(lo), np.concatenate(up), np.concatenate(amp), np.concatenate(det)

    def relative_energies(self, pulse: Pulse) -> np.ndarray:
        """Rotating-frame energies measured from a reference inside each
        connected block of the coupling graph (its lowest basis index).

        The references form a diagonal operator that commutes with the drive
        and with every jump operator's dissipator, so removing them leaves
        the dynamics unchanged while keeping the generator small.
        """
        Er = self.frame_energies(pulse)
        lo, up, _, _ = self.couplings(pulse)
        if lo.size == 0:
            return np.zeros(self.dim)
        graph = sp.coo_matrix((np.ones(lo.size), (lo, up)), shape=(self.dim, self.dim))
        ncomp, labels = connected_components(graph, directed=False)
        ref = np.full(ncomp, np.nan)
        for i in range(self.dim - 1, -1, -1):
            ref[labels[i]] = Er[i]
        return Er - ref[labels]

    def frame_energies(self, pulse: Pulse) -> np.ndarray:
        """Diagonal of the rotating-frame Hamiltonian for ``pulse``'s carrier."""
        return self.energies - self.carrier(pulse) * self.n_excited


def _as_model(model) -> ClusterModel:
    if isinstance(model, ClusterModel):
        return model
    if isinstance(model, ClusterSpec):
        return ClusterModel(model)
    raise TypeError(f"expected ClusterModel or ClusterSpec, got {type(model).__name__}")


def hamiltonian(model, pulses: Iterable[Pulse] = (), frame: float | None = None, envelope_time=None):
    """Rotating-frame Hamiltonian (sparse CSR, MHz).

    ``frame`` is the carrier frequency of the rotating frame; it defaults to
    the carrier of the pulses, which must then all share one carrier.  With no
    pulses and no frame the static lab-frame Hamiltonian is returned.
    ``envelope_time`` evaluates shaped envelopes at that time within the
    pulse; by default the envelope peak is used.
    """
    model = _as_model(model)
    pulses = list(pulses)
    carriers = {round(model.carrier(p), 9) for p in pulses}
    if frame is None:
        if len(carriers) > 1:
            raise ValueError("pulses with different carriers need an explicit common frame")
        frame = carriers.pop() if carriers else 0.0
    diag = model.energies - frame * model.n_excited
    H = sp.diags(diag.astype(complex), format="lil")
    for p in pulses:
        lo, up, amp, det = model.couplings(p)
        f = 1.0 if envelope_time is None else float(p.envelope.shape(envelope_time, p.duration))
        # a carrier away from the frame leaves a time-dependent term; only
        # carriers equal to the frame are representable here
        if abs(model.carrier(p) - frame) > 1e-9:
            raise ValueError("pulse carrier differs from the requested frame")
        val = 0.5 * amp * f * np.exp(1j * p.phase)
        for a, b, v in zip(lo, up, val):
            H[b, a] += v
            H[a, b] += np.conj(v)
    return H.tocsr()


def _cf4_step(Hd, V, shape, t, h):
    """One commutator-free fourth-order Magnus step for H(t) = Hd + shape(t) V."""
    c1, c2 = 0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6
    a1, a2 = (3 - 2 * math.sqrt(3)) / 12, (3 + 2 * math.sqrt(3)) / 12
    f1, f2 = shape(t + c1 * h), shape(t + c2 * h)
    H1 = Hd + f1 * V
    H2 = Hd + f2 * V
    first = scipy.linalg.expm(-2j * np.pi * h * (a2 * H1 + a1 * H2))
    second = scipy.linalg.expm(-2j * np.pi * h * (a1 * H1 + a2 * H2))
    return second @ first


def _shaped_block(Hd, V, pulse, tol=1e-11, max_doublings=14):
    shape = lambda t: float(pulse.envelope.shape(t, pulse.duration))
    T = pulse.duration
    slices = 8
    prev = None
    for _ in range(max_doublings):
        h = T / slices
        U = np.eye(Hd.shape[0], dtype=complex)
        for s in range(slices):
            U = _cf4_step(Hd, V, shape, s * h, h) @ U
        if prev is not None and np.max(np.abs(U - prev)) < tol:
            return U
        prev = U
        slices *= 2
    raise NumericalFailure(
        f"shaped-pulse integration did not converge to {tol} with {slices // 2} slices"
    )


def pulse_unitary(model, pulse: Pulse, t0: float = 0.0) -> sp.csr_matrix:
    """Interaction-picture propagator of ``pulse`` started at absolute time ``t0``.

    Built block by block over the connected components of the coupling graph;
    uncoupled basis states are left exactly unchanged.
    """
    model = _as_model(model)
    lo, up, amp, det = model.couplings(pulse)
    dim = model.dim
    if lo.size == 0:
        return sp.identity(dim, dtype=complex, format="csr")
    Er = model.frame_energies(pulse)
    T = pulse.duration
    t1 = t0 + T
    graph = sp.coo_matrix((np.ones(lo.size), (lo, up)), shape=(dim, dim))
    ncomp, labels = connected_components(graph, directed=False)
    sizes = np.bincount(labels, minlength=ncomp)
    rows, cols, vals = [], [], []
    single = np.flatnonzero(sizes[labels] == 1)
    rows.append(single)
    cols.append(single)
    vals.append(np.ones(single.size, dtype=complex))
    shaped = isinstance(pulse.envelope, Gaussian)
    pair_label = labels[lo]
    order = np.argsort(labels, kind="stable")
    starts = np.concatenate([[0], np.cumsum(sizes)])
    for c in np.flatnonzero(sizes > 1):
        members = order[starts[c]:starts[c + 1]]
        pos = {int(m): a for a, m in enumerate(members)}
        m = len(members)
        ref = Er[members[0]]
        r = Er[members] - ref
        Hd = np.diag(r).astype(complex)
        V = np.zeros((m, m), dtype=complex)
        for a, b, w in zip(lo[pair_label == c], up[pair_label == c], amp[pair_label == c]):
            v = 0.5 * w * np.exp(1j * pulse.phase)
            V[pos[int(b)], pos[int(a)]] += v
            V[pos[int(a)], pos[int(b)]] += np.conj(v)
        if shaped:
            Ub = _shaped_block(Hd, V, pulse)
        else:
            Ub = scipy.linalg.expm(-2j * np.pi * T * (Hd + V))
        Ub = np.exp(2j * np.pi * r * t1)[:, None] * Ub * np.exp(-2j * np.pi * r * t0)[None, :]
        rr, cc = np.meshgrid(members, members, indexing="ij")
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        vals.append(Ub.ravel())
    U = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    ).tocsr()
    U.eliminate_zeros()
    return U


@dataclass(frozen=True, eq=False)
class ClusterState:
    """State of one cluster: a state vector or a density matrix, plus the
    absolute time used to track the interaction picture."""

    data: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.data, dtype=complex)
        dim = d.shape[0]
        n = round(math.log(dim, 4)) if dim > 0 else -1
        if dim < 1 or 4**n != dim or d.ndim not in (1, 2) or (d.ndim == 2 and d.shape != (dim, dim)):
            raise ValueError(f"state dimension must be a power of 4, got shape {d.shape}")
        object.__setattr__(self, "data", d)

    @classmethod
    def product(cls, levels: Sequence[int], time: float = 0.0) -> "ClusterState":
        n = len(levels)
        if any(l not in (0, 1, 2, 3) for l in levels):
            raise ValueError(f"levels must be in 0..3, got {levels}")
        psi = np.zeros(4**n, dtype=complex)
        psi[basis_index(levels)] = 1.0
        return cls(psi, time)

    @classmethod
    def ground(cls, n_ions: int) -> "ClusterState":
        return cls.product([0] * n_ions)

    @property
    def n_ions(self) -> int:
        return round(math.log(self.data.shape[0], 4))

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    @property
    def vector(self) -> np.ndarray:
        if not self.is_pure:
            raise ValueError("state is stored as a density matrix")
        return self.data

    @property
    def density_matrix(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return self.data

    def trace(self) -> float:
        if self.is_pure:
            return float(np.vdot(self.data, self.data).real)
        return float(np.trace(self.data).real)

    def purity(self) -> float:
        if self.is_pure:
            return self.trace() ** 2
        return float(np.vdot(self.data, self.data).real)

    def populations(self) -> np.ndarray:
        if self.is_pure:
            return np.abs(self.data) ** 2
        return np.diag(self.data).real.copy()

    def site_populations(self, site: int) -> np.ndarray:
        """Populations of (|0>, |1>, |aux>, |e>) of one ion."""
        p = self.populations().reshape([4] * self.n_ions)  # axes: site n-1 ... site 0
        axis = self.n_ions - 1 - site
        other = tuple(a for a in range(self.n_ions) if a != axis)
        return p.sum(axis=other)

    def reduced(self, site: int) -> np.ndarray:
        """4x4 reduced density matrix of one ion."""
        n = self.n_ions
        axis = n - 1 - site
        letters = "abcdefghijkl"
        row = list(letters[:n])
        col = list(row)
        row[axis], col[axis] = "x", "y"
        if self.is_pure:
            psi = self.data.reshape([4] * n)
            return np.einsum(f"{''.join(row)},{''.join(col)}->xy", psi, psi.conj())
        rho = self.data.reshape([4] * (2 * n))
        return np.einsum(f"{''.join(row)}{''.join(col)}->xy", rho)

    def validate(self, tol: float = 1e-10, psd_tol: float = 1e-9) -> None:
        """Raise ``ValueError`` if Hermiticity, trace or positivity is violated."""
        if abs(self.trace() - 1) > tol:
            raise ValueError(f"trace {self.trace()!r} differs from 1")
        if not self.is_pure:
            rho = self.data
            if np.max(np.abs(rho - rho.conj().T)) > tol:
                raise ValueError("density matrix is not Hermitian")
            if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -psd_tol:
                raise ValueError("density matrix is not positive semidefinite")


def _lindblad_generator(model: ClusterModel, pulse: Pulse, noise: NoiseParams, f: float = 1.0):
    """Row-major vectorised Lindbladian in the carrier's rotating frame, with
    the block references of :meth:`ClusterModel.relative_energies` removed."""
    dim = model.dim
    H = sp.diags(model.relative_energies(pulse).astype(complex), format="csr")
    lo, up, amp, _ = model.couplings(pulse)
    if lo.size:
        v = 0.5 * amp * f * np.exp(1j * pulse.phase)
        D = sp.coo_matrix((v, (up, lo)), shape=(dim, dim)).tocsr()
        H = H + D + D.conj().T
    I = sp.identity(dim, dtype=complex, format="csr")
    L = -2j * np.pi * (sp.kron(H, I) - sp.kron(I, H.T))
    for Lk in _jump_operators(model, noise):
        LdL = (Lk.conj().T @ Lk).tocsr()
        L = L + sp.kron(Lk, Lk.conj()) - 0.5 * sp.kron(LdL, I) - 0.5 * sp.kron(I, LdL.T)
    return L.tocsr()


def _jump_operators(model: ClusterModel, noise: NoiseParams):
    ops = []
    lv = model.levels
    dim = model.dim
    for k in range(model.n):
        if math.isfinite(noise.optical_T2):
            d = np.sqrt(2.0 / noise.optical_T2) * (lv[:, k] == E)
            ops.append(sp.diags(d.astype(complex), format="csr"))
        if math.isfinite(noise.spin_T2):
            d = np.sqrt(1.0 / (2.0 * noise.spin_T2)) * ((lv[:, k] == 1).astype(float) - (lv[:, k] == 0))
            ops.append(sp.diags(d.astype(complex), format="csr"))
        if math.isfinite(noise.excited_lifetime):
            src = np.flatnonzero(lv[:, k] == E)
            for g, b in enumerate(model.cluster.sites[k].level_scheme.branching):
                if b == 0:
                    continue
                dst = src - (E - g) * 4**k
                vals = np.full(src.size, math.sqrt(b / noise.excited_lifetime), dtype=complex)
                ops.append(sp.coo_matrix((vals, (dst, src)), shape=(dim, dim)).tocsr())
    return ops


def _frame_phase(model, pulse, t):
    return np.exp(-2j * np.pi * model.relative_energies(pulse) * t)


DENSE_SUPEROP_MAX_DIM = 16


def _superop_propagator(model: ClusterModel, pulse: Pulse, noise: NoiseParams):
    """Rotating-frame propagator of a rectangular pulse, cached on the model.

    Small systems get a dense matrix; larger ones return the sparse generator
    scaled by the duration for use with ``expm_multiply``.
    """
    cache = model.__dict__.setdefault("_superop_cache", {})
    key = (pulse, noise)
    if key not in cache:
        L = _lindblad_generator(model, pulse, noise) * pulse.duration
        if model.dim <= DENSE_SUPEROP_MAX_DIM:
            cache[key] = ("dense", scipy.linalg.expm(L.toarray()))
        else:
            cache[key] = ("sparse", L)
        if len(cache) > 256:
            cache.pop(next(iter(cache)))
    return cache[key]


def apply_pulse_channel(model: ClusterModel, pulse: Pulse, noise: NoiseParams, vecs: np.ndarray, t0: float) -> np.ndarray:
    """Apply one noisy pulse to row-major vectorised operators (columns of ``vecs``).

    Inputs and outputs are in the interaction picture; any operator, not only
    density matrices, may be propagated.
    """
    f0 = _frame_phase(model, pulse, t0)
    f1 = _frame_phase(model, pulse, t0 + pulse.duration)
    vecs = np.outer(f0, f0.conj()).reshape(-1, 1) * vecs
    traces_in = vecs.reshape(model.dim, model.dim, -1).trace(axis1=0, axis2=1)
    if isinstance(pulse.envelope, Gaussian):
        vecs = _shaped_lindblad(model, pulse, noise, vecs)
    else:
        kind, P = _superop_propagator(model, pulse, noise)
        vecs = P @ vecs if kind == "dense" else expm_multiply(P, vecs)
    traces_out = vecs.reshape(model.dim, model.dim, -1).trace(axis1=0, axis2=1)
    if not np.all(np.isfinite(traces_out)) or np.max(np.abs(traces_out - traces_in), initial=0) > 1e-8:
        raise NumericalFailure(f"trace drifted during pulse on site {pulse.site}")
    return np.outer(f1.conj(), f1).reshape(-1, 1) * vecs


def _evolve_density(model: ClusterModel, rho: np.ndarray, pulse: Pulse, noise: NoiseParams, t0: float):
    out = apply_pulse_channel(model, pulse, noise, rho.reshape(-1, 1), t0)
    return out.reshape(model.dim, model.dim)


def _shaped_lindblad(model, pulse, noise, vecs, tol=1e-10, max_doublings=12):
    L0 = _lindblad_generator(model, pulse, noise, f=0.0)
    L1 = _lindblad_generator(model, pulse, noise, f=1.0) - L0
    dense = model.dim <= DENSE_SUPEROP_MAX_DIM
    if dense:
        L0, L1 = L0.toarray(), L1.toarray()
    step = (lambda A, v: scipy.linalg.expm(A) @ v) if dense else expm_multiply
    c1, c2 = 0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6
    a1, a2 = (3 - 2 * math.sqrt(3)) / 12, (3 + 2 * math.sqrt(3)) / 12
    shape = lambda t: float(pulse.envelope.shape(t, pulse.duration))
    T = pulse.duration
    slices = 8
    prev = None
    for _ in range(max_doublings):
        h = T / slices
        v = vecs.copy()
        for s in range(slices):
            f1, f2 = shape(s * h + c1 * h), shape(s * h + c2 * h)
            v = step(h * ((a2 + a1) * L0 + (a2 * f1 + a1 * f2) * L1), v)
            v = step(h * ((a1 + a2) * L0 + (a1 * f1 + a2 * f2) * L1), v)
        if prev is not None and np.max(np.abs(v - prev)) < tol:
            return v
        prev = v
        slices *= 2
    raise NumericalFailure("shaped-pulse Lindblad integration did not converge")


def evolve(state: ClusterState, pulse: Pulse, model, noise: NoiseParams | None = None) -> ClusterState:
    """Apply one pulse.  Pure states stay pure unless noise is enabled."""
    model = _as_model(model)
    if state.dim != model.dim:
        raise ValueError(f"state has dimension {state.dim}, cluster needs {model.dim}")
    noise = noise or NOISELESS
    t0 = state.time
    if noise.enabled:
        rho = _evolve_density(model, state.density_matrix, pulse, noise, t0)
        return ClusterState(rho, t0 + pulse.duration)
    U = pulse_unitary(model, pulse, t0)
    if state.is_pure:
        return ClusterState(U @ state.data, t0 + pulse.duration)
    rho = U @ state.data
    rho = (U.conj() @ rho.T).T  # rho U^dagger
    return ClusterState(rho, t0 + pulse.duration)


def run_sequence(state: ClusterState, pulses: Iterable[Pulse], model, noise: NoiseParams | None = None) -> ClusterState:
    model = _as_model(model)
    for p in pulses:
        state = evolve(state, p, model, noise)
    return state


def propagate_columns(model, pulses: Sequence[Pulse], columns: np.ndarray, t0: float = 0.0) -> np.ndarray:
    """Push a (dim x k) block of state vectors through a noiseless sequence."""
    model = _as_model(model)
    out = np.array(columns, dtype=complex)
    t = t0
    for p in pulses:
        out = pulse_unitary(model, p, t) @ out
        t += p.duration
    return out


def sequence_unitary(model, pulses: Sequence[Pulse], t0: float = 0.0) -> np.ndarray:
    """Dense interaction-picture unitary of a noiseless sequence."""
    model = _as_model(model)
    return propagate_columns(model, pulses, np.eye(model.dim, dtype=complex), t0)


def evolve_batch(model, pulses: Sequence[Pulse], detunings: np.ndarray, psis: np.ndarray, t0: float = 0.0) -> np.ndarray:
    """Noiseless evolution of many cluster instances that differ only in
    their per-site detunings.

    ``detunings`` has shape (N, n_sites) and ``psis`` shape (N, dim).  Which
    couplings exist is decided from the undetuned model, so detunings should
    be small compared with the drive window.  Shaped envelopes fall back to a
    per-instance loop.
    """
    model = _as_model(model)
    det = np.atleast_2d(np.asarray(detunings, dtype=float))
    out = np.array(psis, dtype=complex, copy=True)
    if det.shape != (out.shape[0], model.n) or out.shape[1] != model.dim:
        raise ValueError("detunings must be (N, n_sites) and states (N, dim)")
    excited = (model.levels == E).astype(float)
    shifts = det @ excited.T  # (N, dim) energy offsets from the detunings
    t = t0
    for pulse in pulses:
        if isinstance(pulse.envelope, Gaussian):
            for k in range(out.shape[0]):
                out[k] = pulse_unitary(model.with_detunings(model.detunings + det[k]), pulse, t) @ out[k]
            t += pulse.duration
            continue
        lo, up, amp, _ = model.couplings(pulse)
        if lo.size == 0:
            t += pulse.duration
            continue
        Er = model.frame_energies(pulse)[None, :] + shifts
        graph = sp.coo_matrix((np.ones(lo.size), (lo, up)), shape=(model.dim, model.dim))
        ncomp, labels = connected_components(graph, directed=False)
        sizes = np.bincount(labels, minlength=ncomp)
        T, t1 = pulse.duration, t + pulse.duration
        for c in np.flatnonzero(sizes > 1):
            members = np.flatnonzero(labels == c)
            pos = {int(m): a for a, m in enumerate(members)}
            m = members.size
            r = Er[:, members] - Er[:, members[:1]]
            V = np.zeros((m, m), dtype=complex)
            sel = labels[lo] == c
            for a, b, w in zip(lo[sel], up[sel], amp[sel]):
                v = 0.5 * w * np.exp(1j * pulse.phase)
                V[pos[int(b)], pos[int(a)]] += v
                V[pos[int(a)], pos[int(b)]] += np.conj(v)
            H = V[None, :, :] + r[:, :, None] * np.eye(m)[None, :, :]
            w_, Q = np.linalg.eigh(H)
            Ub = np.einsum("nij,nj,nkj->nik", Q, np.exp(-2j * np.pi * T * w_), Q.conj())
            vec = out[:, members] * np.exp(-2j * np.pi * r * t)
            vec = np.einsum("nij,nj->ni", Ub, vec) * np.exp(2j * np.pi * r * t1)
            out[:, members] = vec
        t = t1
    return out
