"""Photonic states stored across ensemble qubits, at the level of modes.

A photon absorbed into mode A and transferred to the spin ground state leaves
one cluster, out of N, with its A ion in |1>, in a symmetric superposition
over clusters.  For large N these collective excitations behave as bosonic
modes.  Gates act identically and independently on every cluster, so a
single-cluster unitary U that leaves the empty cluster alone acts on the
collective excitations as a linear-optics transformation.

Here a *type* is the local configuration of one cluster's mode ions other
than the empty configuration, written as a tuple of levels in mode order,
e.g. ``(1, 0)`` for "A ion in |1>, B ion in |0>".  A *pattern* is a sorted
tuple of types, one entry per excited cluster; the empty pattern is the
vacuum.  Amplitudes are those of normalised Fock states over types.  Two
excitations landing in the same cluster form a single type such as
``(1, 1)``; preparing product states neglects that O(1/N) possibility and the
neglected weight is kept in ``diagnostics``.

:func:`exact_oracle` simulates N explicit clusters and projects the result
back onto patterns, which is exact for any N and validates the mode algebra.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import ClusterSpec
from .pulsesim.compiler import CompiledGate, compile_beamsplitter, compile_swap7, ideal_sequence_unitary
from .pulsesim.dynamics import ClusterModel, DriveModel, sequence_unitary
from .pulsesim.pulses import Pulse, parse_sequence

__all__ = [
    "SPEED_OF_LIGHT",
    "StoredPhotonicState",
    "ModeError",
    "store",
    "store_coherent",
    "apply_cnot_stored",
    "apply_type_map",
    "cluster_type_map",
    "apply_sequence_stored",
    "optical_depth_flags",
    "encode_dual_rail",
    "decode_dual_rail",
    "logical_amplitudes",
    "phase_efficiency",
    "recall",
    "exact_oracle",
    "oracle_deviation",
    "default_mode_cluster",
    "parse_circuit",
    "run_circuit",
]

SPEED_OF_LIGHT = 299_792_458.0  # m/s


class ModeError(ValueError):
    """An operation refers to a mode or site the state does not have."""


Type = tuple  # tuple[int, ...] of levels, one per mode
Pattern = tuple  # sorted tuple of types


def _unit_type(k: int, m: int) -> Type:
    t = [0] * k
    t[m] = 1
    return tuple(t)


@dataclass(frozen=True, eq=False)
class StoredPhotonicState:
    modes: tuple[str, ...]
    amplitudes: Mapping[Pattern, complex]
    n_ensemble: float = math.inf
    wavevectors: tuple[float, ...] | None = None
    truncation: int = 2
    diagnostics: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        modes = tuple(self.modes)
        if len(set(modes)) != len(modes) or not modes:
            raise ValueError("modes must be distinct and non-empty")
        object.__setattr__(self, "modes", modes)
        k = len(modes)
        amps = {}
        for pat, a in self.amplitudes.items():
            pat = tuple(sorted(tuple(int(l) for l in t) for t in pat))
            for t in pat:
                if len(t) != k or not any(t):
                    raise ValueError(f"invalid type {t} for {k} modes")
            amps[pat] = amps.get(pat, 0) + complex(a)
        object.__setattr__(self, "amplitudes", amps)
        if self.wavevectors is not None and len(self.wavevectors) != k:
            raise ValueError("need one wavevector per mode")
        if self.photon_number() > self.truncation:
            raise ValueError(f"state holds {self.photon_number()} excitations, above truncation {self.truncation}")

    @property
    def k(self) -> int:
        return len(self.modes)

    def mode_index(self, name) -> int:
        if isinstance(name, int) and 0 <= name < self.k:
            return name
        try:
            return self.modes.index(name)
        except ValueError:
            raise ModeError(f"unknown mode {name!r}; modes are {self.modes}") from None

    def norm(self) -> float:
        return math.sqrt(sum(abs(a) ** 2 for a in self.amplitudes.values()))

    def photon_number(self) -> int:
        return max((len(p) for p, a in self.amplitudes.items() if a != 0), default=0)

    def amplitude(self, *types) -> complex:
        return self.amplitudes.get(tuple(sorted(tuple(t) for t in types)), 0j)

    def vector(self, patterns: Sequence[Pattern]) -> np.ndarray:
        return np.array([self.amplitudes.get(p, 0j) for p in patterns])

    def cleaned(self, tol: float = 0.0) -> "StoredPhotonicState":
        amps = {p: a for p, a in self.amplitudes.items() if abs(a) > tol}
        return replace(self, amplitudes=amps)

    def distance(self, other: "StoredPhotonicState") -> float:
        """Largest amplitude difference over all patterns."""
        keys = set(self.amplitudes) | set(other.amplitudes)
        return max((abs(self.amplitudes.get(p, 0) - other.amplitudes.get(p, 0)) for p in keys), default=0.0)

    def overlap(self, other: "StoredPhotonicState") -> complex:
        return sum(np.conj(a) * other.amplitudes.get(p, 0) for p, a in self.amplitudes.items())

    def to_json(self) -> str:
        pats = sorted(self.amplitudes.items(), key=lambda kv: (len(kv[0]), kv[0]))
        doc = {
            "modes": list(self.modes),
            "patterns": [
                {"types": [list(t) for t in p], "re": float(np.real(a)), "im": float(np.imag(a))} for p, a in pats
            ],
            "N": None if math.isinf(self.n_ensemble) else self.n_ensemble,
            "wavevectors": None if self.wavevectors is None else list(self.wavevectors),
            "truncation": self.truncation,
            "diagnostics": dict(sorted(self.diagnostics.items())),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StoredPhotonicState":
        doc = json.loads(text)
        amps = {tuple(tuple(t) for t in e["types"]): complex(e["re"], e["im"]) for e in doc["patterns"]}
        return cls(
            tuple(doc["modes"]),
            amps,
            math.inf if doc.get("N") is None else doc["N"],
            None if doc.get("wavevectors") is None else tuple(doc["wavevectors"]),
            doc.get("truncation", 2),
            doc.get("diagnostics", {}),
        )


def _check_normalised(vec, what, tol=1e-10):
    n = float(np.sum(np.abs(np.asarray(vec)) ** 2))
    if abs(n - 1) > tol:
        raise ValueError(f"{what} is not normalised (squared norm {n!r})")


def store(
    inputs: Mapping[str, Sequence[complex]],
    n_ensemble: float = math.inf,
    wavevectors: Mapping[str, float] | None = None,
    truncation: int | None = None,
) -> StoredPhotonicState:
    """Product state of the input photons, one entry per mode.

    Each input is a vector of Fock amplitudes (c_0, c_1, ...); a photonic
    qubit (c_1, c_2) in the notation "vacuum, one photon" is just the two-entry
    case.  The weight of configurations where photons from different modes
    would share a cluster is dropped and recorded as ``same_cluster_weight``
    (to leading order in 1/N).
    """
    modes = tuple(inputs)
    k = len(modes)
    vecs = []
    for m in modes:
        v = np.asarray(inputs[m], dtype=complex)
        if v.ndim != 1 or v.size < 1:
            raise ValueError(f"input for mode {m!r} must be a non-empty vector")
        _check_normalised(v, f"input for mode {m!r}")
        vecs.append(v)
    trunc = max(sum(v.size - 1 for v in vecs), 1) if truncation is None else truncation
    amps: dict[Pattern, complex] = {}
    dropped = 0.0
    for ns in itertools.product(*(range(v.size) for v in vecs)):
        a = complex(np.prod([v[n] for v, n in zip(vecs, ns)]))
        if a == 0:
            continue
        pat = tuple(sorted(t for m, n in enumerate(ns) for t in [_unit_type(k, m)] * n))
        amps[pat] = amps.get(pat, 0) + a
        cross_pairs = (sum(ns) ** 2 - sum(n * n for n in ns)) / 2
        if math.isfinite(n_ensemble):
            dropped += abs(a) ** 2 * cross_pairs / n_ensemble
    wv = None if wavevectors is None else tuple(float(wavevectors[m]) for m in modes)
    return StoredPhotonicState(modes, amps, n_ensemble, wv, trunc, {"same_cluster_weight": dropped})


def store_coherent(alphas: Mapping[str, complex], truncation: int = 2, n_ensemble: float = math.inf):
    """Weak coherent inputs truncated at ``truncation`` photons per mode;
    the discarded probability is reported as ``truncation_error``."""
    inputs = {}
    err = 0.0
    for m, alpha in alphas.items():
        n = np.arange(truncation + 1)
        c = np.exp(-abs(alpha) ** 2 / 2) * np.array([alpha**j / math.sqrt(math.factorial(j)) for j in n], dtype=complex)
        kept = float(np.sum(np.abs(c) ** 2))
        err = 1 - (1 - err) * kept
        inputs[m] = c / math.sqrt(kept)
    st = store(inputs, n_ensemble, truncation=truncation * len(alphas))
    return replace(st, diagnostics={**st.diagnostics, "truncation_error": err})


def _all_types(k: int) -> list[Type]:
    return [t for t in itertools.product(range(4), repeat=k) if any(t)][::1]


def _type_index(t: Type) -> int:
    return int(sum(l * 4**m for m, l in enumerate(t)))


def cluster_type_map(U: np.ndarray, k: int, tol: float = 1e-9) -> dict[Type, dict[Type, complex]]:
    """Linear map on types induced by a single-cluster unitary on k ions.

    The empty configuration must be an eigenvector of ``U``; its phase is
    divided out, since it is a global phase of the ensemble.
    """
    U = np.asarray(U, dtype=complex)
    if U.shape != (4**k, 4**k):
        raise ValueError(f"unitary must act on {k} ions")
    vac = U[:, 0]
    if abs(abs(vac[0]) - 1) > tol:
        raise ValueError("the cluster unitary does not leave the empty cluster unchanged")
    U = U * np.conj(vac[0])
    out: dict[Type, dict[Type, complex]] = {}
    types = _all_types(k)
    for t in types:
        col = U[:, _type_index(t)]
        nz = np.flatnonzero(np.abs(col) > 1e-15)
        out[t] = {types_from_index(i, k): complex(col[i]) for i in nz}
    return out


def types_from_index(i: int, k: int) -> Type:
    return tuple((i // 4**m) % 4 for m in range(k))


def apply_type_map(state: StoredPhotonicState, tmap: Mapping[Type, Mapping[Type, complex]]) -> StoredPhotonicState:
    """Apply a per-cluster linear map to every excitation (bosonic substitution)."""
    out: dict[Pattern, complex] = defaultdict(complex)
    for pat, amp in state.amplitudes.items():
        if amp == 0:
            continue
        counts = _counts(pat)
        coeff = amp / math.sqrt(math.prod(math.factorial(c) for c in counts.values()))
        branches = [list(tmap.get(t, {t: 1.0}).items()) for t in pat]
        for choice in itertools.product(*branches):
            c = coeff * math.prod(w for _, w in choice) if choice else coeff
            if c == 0:
                continue
            new = tuple(sorted(t for t, _ in choice))
            if () in [tuple(t) for t in new] or any(not any(t) for t in new):
                raise ValueError("type map sends an excitation to the empty cluster")
            out[new] += c * math.sqrt(math.prod(math.factorial(v) for v in _counts(new).values()))
    amps = {p: a for p, a in out.items() if abs(a) > 1e-15}
    return replace(state, amplitudes=amps)


def _counts(pat: Pattern) -> dict[Type, int]:
    c: dict[Type, int] = defaultdict(int)
    for t in pat:
        c[t] += 1
    return c


def apply_cnot_stored(state: StoredPhotonicState, control, target) -> StoredPhotonicState:
    """Logical CNOT applied to every cluster, at the mode level.

    Per cluster the qubit levels transform as |c, t> -> |c, t xor c>; levels
    outside {|0>, |1>} are left alone.  An excitation in the control mode alone
    therefore gains a partner excitation of the target in the same cluster,
    and the photon number is unchanged.
    """
    ci, ti = state.mode_index(control), state.mode_index(target)
    if ci == ti:
        raise ModeError("control and target modes must differ")
    tmap = {}
    for t in _all_types(state.k):
        if t[ci] == 1 and t[ti] in (0, 1):
            new = list(t)
            new[ti] = 1 - t[ti]
            new = tuple(new)
            if any(new):
                tmap[t] = {new: 1.0}
    return apply_type_map(state, tmap)


def default_mode_cluster(k: int, delta: float = 30.0, spacing: float = 500.0) -> ClusterSpec:
    """Cluster with one ion per mode, well separated lines and equal pair interactions."""
    inter = {(i, j): delta for i in range(k) for j in range(i + 1, k)}
    return ClusterSpec.explicit([spacing * i for i in range(k)], inter)


def _sequence_of(seq) -> tuple[Pulse, ...]:
    if isinstance(seq, CompiledGate):
        return seq.pulses
    if isinstance(seq, str):
        return tuple(parse_sequence(seq))
    return tuple(seq)


def _cluster_unitary(cluster: ClusterSpec, pulses, method: str) -> np.ndarray:
    if method == "dynamics":
        return sequence_unitary(ClusterModel(cluster, DriveModel.ideal()), pulses)
    if method == "oracle":
        return ideal_sequence_unitary(cluster, pulses)
    raise ValueError(f"unknown method {method!r}")


def optical_depth_flags(state: StoredPhotonicState, pulses: Sequence[Pulse], threshold: float = 0.1) -> list[dict]:
    """Flag pulses whose lower level holds a large share of the ensemble.

    Almost every cluster is empty, so an unconditional pulse out of |0>
    would meet the whole optically thick line.  Conditional pulses and pulses
    out of other levels only meet the O(photons/N) excited part.
    """
    n_exc = state.photon_number()
    N = state.n_ensemble
    empty_fraction = 1.0 if math.isinf(N) else max(0.0, 1.0 - n_exc / N)
    flags = []
    for i, p in enumerate(pulses):
        frac = empty_fraction if (p.ground == 0 and not p.shift_condition) else (0.0 if math.isinf(N) else min(1.0, n_exc / N))
        flags.append({"pulse": i, "site": p.site, "transition": p.transition,
                      "lower_level_fraction": frac, "high_optical_depth": frac > threshold})
    return flags


def apply_sequence_stored(
    state: StoredPhotonicState,
    sequence,
    cluster: ClusterSpec | None = None,
    *,
    method: str = "dynamics",
    od_threshold: float = 0.1,
) -> StoredPhotonicState:
    """Apply a compiled pulse sequence to every cluster and map the result
    onto the stored modes.

    Mode m is bound to site m of ``cluster`` (a default cluster is built when
    omitted).  The single-cluster unitary comes from the pulse dynamics with
    perfectly selective pulses, or from the closed-form oracle with
    ``method="oracle"``.  Pulses that would drive an optically thick
    transition are counted in ``diagnostics['high_od_pulses']``.
    """
    pulses = _sequence_of(sequence)
    k = state.k
    if cluster is None:
        deltas = [abs(d) for p in pulses for _, d in p.shift_condition]
        cluster = default_mode_cluster(k, deltas[0] if deltas else 30.0)
    if len(cluster) != k:
        raise ModeError(f"cluster has {len(cluster)} sites but the state has {k} modes")
    for p in pulses:
        for s in p.sites():
            if not 0 <= s < k:
                raise ModeError(f"pulse acts on site {s}, which is not bound to a mode")
    U = _cluster_unitary(cluster, pulses, method)
    out = apply_type_map(state, cluster_type_map(U, k))
    flags = optical_depth_flags(state, pulses, od_threshold)
    diag = dict(out.diagnostics)
    diag["high_od_pulses"] = diag.get("high_od_pulses", 0) + sum(f["high_optical_depth"] for f in flags)
    return replace(out, diagnostics=diag)


def encode_dual_rail(alpha: complex, beta: complex, a="A", b="B", n_ensemble: float = math.inf) -> StoredPhotonicState:
    """|0>_L is one excitation in mode ``a``, |1>_L one excitation in mode ``b``."""
    _check_normalised([alpha, beta], "dual-rail qubit")
    return StoredPhotonicState((a, b), {((1, 0),): alpha, ((0, 1),): beta}, n_ensemble, truncation=1)


def decode_dual_rail(state: StoredPhotonicState, a="A", b="B") -> tuple[complex, complex, float]:
    """Logical amplitudes (alpha, beta) and the leakage weight outside the code."""
    ia, ib = state.mode_index(a), state.mode_index(b)
    ta, tb = _unit_type(state.k, ia), _unit_type(state.k, ib)
    alpha, beta = state.amplitude(ta), state.amplitude(tb)
    leak = max(0.0, state.norm() ** 2 - abs(alpha) ** 2 - abs(beta) ** 2)
    return alpha, beta, leak


def logical_amplitudes(state: StoredPhotonicState, rails: Sequence[tuple[str, str]]) -> np.ndarray:
    """Amplitudes of several dual-rail qubits, index bit q = value of qubit q."""
    out = np.zeros(2 ** len(rails), dtype=complex)
    for idx in range(2 ** len(rails)):
        types = []
        for q, (a, b) in enumerate(rails):
            m = state.mode_index(b if (idx >> q) & 1 else a)
            types.append(_unit_type(state.k, m))
        out[idx] = state.amplitude(*types)
    return out


def phase_efficiency(delta_f_ghz: float, crystal_length_mm: float) -> float:
    """|(1/L) int_0^L exp(i 2 pi df z / c) dz|^2 = sinc^2(pi df L / c)."""
    if crystal_length_mm <= 0:
        raise ValueError("crystal length must be positive")
    x = math.pi * delta_f_ghz * 1e9 * crystal_length_mm * 1e-3 / SPEED_OF_LIGHT
    if x == 0:
        return 1.0
    return (math.sin(x) / x) ** 2


def recall(
    state: StoredPhotonicState,
    crystal_length_mm: float,
    frequency_offsets_ghz: Mapping[str, float],
    significant_loss: float = 0.1,
) -> dict:
    """Recall every mode whose excitation was moved across a frequency
    difference; each photon in mode m keeps amplitude sqrt(eta_m)."""
    eff = {}
    for m in state.modes:
        eff[m] = phase_efficiency(float(frequency_offsets_ghz.get(m, 0.0)), crystal_length_mm)
    scale = {}
    out = {}
    for pat, a in state.amplitudes.items():
        f = 1.0
        for t in pat:
            for m, lvl in enumerate(t):
                if lvl == 1:
                    f *= math.sqrt(eff[state.modes[m]])
        out[pat] = a * f
    return {
        "amplitudes": out,
        "phase_efficiency": eff,
        "significant": {m: (1 - e) > significant_loss for m, e in eff.items()},
    }


# --- exact finite-N validation ------------------------------------------------


def exact_oracle(
    n_clusters: int,
    inputs: Mapping[str, Sequence[complex]],
    unitaries: Sequence[np.ndarray] = (),
    max_clusters: int = 6,
) -> StoredPhotonicState:
    """Explicit N-cluster simulation of stored qubits, projected onto patterns.

    ``inputs`` maps each mode to a qubit (c_vacuum, c_photon); the stored state
    is the product over modes of (c_0 + c_1 |1>_mode) with |1>_mode the
    symmetric single excitation over N clusters, including the terms where
    two modes are excited in the same cluster.  Each unitary (on the k mode
    ions of one cluster) is applied to every cluster.  The result is projected
    onto normalised symmetric pattern states.
    """
    if not 1 <= n_clusters <= max_clusters:
        raise ValueError(f"exact oracle supports 1..{max_clusters} clusters, got {n_clusters}")
    modes = tuple(inputs)
    k = len(modes)
    vecs = [np.asarray(inputs[m], dtype=complex) for m in modes]
    for m, v in zip(modes, vecs):
        if v.shape != (2,):
            raise ValueError("the exact oracle takes single-photon qubits per mode")
        _check_normalised(v, f"input for mode {m!r}")
    N = n_clusters
    # configuration: tuple of local codes, one per cluster
    state: dict[tuple[int, ...], complex] = defaultdict(complex)
    for excited in itertools.product((0, 1), repeat=k):
        amp = np.prod([v[e] for v, e in zip(vecs, excited)])
        if amp == 0:
            continue
        active = [m for m in range(k) if excited[m]]
        norm = N ** (-len(active) / 2)
        for where in itertools.product(range(N), repeat=len(active)):
            cfg = [0] * N
            for m, j in zip(active, where):
                cfg[j] += 4**m
            state[tuple(cfg)] += amp * norm
    for U in unitaries:
        U = np.asarray(U, dtype=complex)
        if U.shape != (4**k, 4**k):
            raise ValueError(f"unitary must act on {k} ions")
        if abs(abs(U[0, 0]) - 1) > 1e-9:
            raise ValueError("the cluster unitary does not leave the empty cluster unchanged")
        U = U * np.conj(U[0, 0])
        cols = {c: [(int(r), U[r, c]) for r in np.flatnonzero(np.abs(U[:, c]) > 1e-15)] for c in range(4**k)}
        new: dict[tuple[int, ...], complex] = defaultdict(complex)
        for cfg, amp in state.items():
            branches = [cols[c] if c else [(0, 1.0)] for c in cfg]
            for choice in itertools.product(*branches):
                w = amp
                for _, x in choice:
                    w *= x
                if w != 0:
                    new[tuple(r for r, _ in choice)] += w
        state = new
    # project onto classes
    sums: dict[Pattern, complex] = defaultdict(complex)
    sizes: dict[Pattern, int] = {}
    for cfg, amp in state.items():
        pat = tuple(sorted(types_from_index(c, k) for c in cfg if c))
        sums[pat] += amp
        if pat not in sizes:
            m = len(pat)
            mult = math.prod(math.factorial(v) for v in _counts(pat).values())
            sizes[pat] = math.perm(N, m) // mult
    amps = {p: s / math.sqrt(sizes[p]) for p, s in sums.items() if abs(s) > 1e-15}
    return StoredPhotonicState(modes, amps, N, truncation=max(k, 1))


def oracle_deviation(mode_state: StoredPhotonicState, oracle_state: StoredPhotonicState) -> float:
    """Infidelity 1 - |<mode|oracle>|^2 between normalised pattern states."""
    ov = mode_state.overlap(oracle_state)
    return float(max(0.0, 1.0 - abs(ov) ** 2 / (mode_state.norm() ** 2 * oracle_state.norm() ** 2)))


# --- circuits -----------------------------------------------------------------


def parse_circuit(text: str) -> list[tuple]:
    """Parse lines ``swap A B``, ``bs A B theta phi`` and ``cnot A B``."""
    ops = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        op = tok[0].lower()
        if op in ("swap", "cnot") and len(tok) == 3:
            ops.append((op, tok[1], tok[2]))
        elif op == "bs" and len(tok) in (4, 5):
            ops.append(("bs", tok[1], tok[2], float(tok[3]), float(tok[4]) if len(tok) == 5 else 0.0))
        else:
            raise ValueError(f"line {lineno}: cannot parse {line!r}")
    return ops


def run_circuit(state: StoredPhotonicState, ops: Iterable[tuple], cluster: ClusterSpec | None = None,
                rabi: float = 1.0) -> StoredPhotonicState:
    """Run a high-level circuit; ``swap`` and ``bs`` go through the pulse
    compiler, ``cnot`` through the logical mode map."""
    cluster = cluster or default_mode_cluster(state.k)
    for op in ops:
        a, b = state.mode_index(op[1]), state.mode_index(op[2])
        if op[0] == "cnot":
            state = apply_cnot_stored(state, a, b)
        elif op[0] == "swap":
            state = apply_sequence_stored(state, compile_swap7(a, b, cluster.delta(a, b), rabi), cluster)
        elif op[0] == "bs":
            gate = compile_beamsplitter(a, b, cluster.delta(a, b), op[3], op[4], rabi)
            state = apply_sequence_stored(state, gate, cluster)
        else:
            raise ValueError(f"unknown operation {op[0]!r}")
    return state
