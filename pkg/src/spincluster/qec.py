"""Three-qubit repetition codes run on ensemble qubits.

Qubit 0 holds the data (A), qubits 1 and 2 are ancillas (B, C).  Basis index
bit q is the value of qubit q.  Ancillas are never measured: after the
majority-vote CCNOT they are reset, which here means tracing them out and
re-preparing |0>.  The encoding is repeated at the start of every cycle.

Two evaluation modes are provided.  ``exact`` propagates the 8x8 density
matrix through the exact error channel; ``trajectories`` samples one pure state
per cluster of the ensemble, which is how correlated errors show up as
co-occurring events.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import ClusterSpec
from .pulsesim.compiler import ccnot_on, cnot_on, compile_hadamard
from .pulsesim.dynamics import ClusterModel, ClusterState, DriveModel, NoiseParams, evolve

__all__ = [
    "EngineeredLine",
    "ErrorChannel",
    "ECProtocol",
    "ProtocolResult",
    "apply_channel",
    "apply_channel_trajectories",
    "sample_engineered",
    "process_fidelity",
    "channel_process_fidelity_mc",
    "run_protocol",
    "logical_error_oracle",
    "correlation_study",
    "correlation_from_separation",
    "pulse_level_protocol",
    "write_study_csv",
]

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
PAULIS = {"I": _I2, "X": _X, "Y": _Y, "Z": _Z}
N_QUBITS = 3


@dataclass(frozen=True)
class EngineeredLine:
    """Exciting one satellite line applies ``gate`` to ``targets`` in a
    fraction ``C`` of the clusters, the same clusters for every target."""

    excitation_fraction: float
    gate: str = "X"
    targets: tuple[int, ...] = (0,)

    def __post_init__(self):
        if not 0 <= self.excitation_fraction <= 1:
            raise ValueError("excitation_fraction must lie in [0, 1]")
        if self.gate not in PAULIS:
            raise ValueError(f"gate must be one of {sorted(PAULIS)}")
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))


@dataclass(frozen=True, eq=False)
class ErrorChannel:
    """Error applied during the error window.

    ``dephasing``: random Z phases with per-qubit rates (1/us) over
    ``window`` us, jointly Gaussian with correlation matrix ``correlation``;
    a qubit's coherence decays as exp(-rate * window).
    ``depolarizing``: independent depolarisation with probability ``rates[q]``.
    ``engineered``: independent lines, see :class:`EngineeredLine`.
    """

    kind: str
    rates: tuple[float, ...] = (0.0, 0.0, 0.0)
    correlation: np.ndarray | None = None
    window: float = 1.0
    lines: tuple[EngineeredLine, ...] = ()

    def __post_init__(self):
        if self.kind not in ("dephasing", "depolarizing", "engineered"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        rates = tuple(float(r) for r in self.rates)
        object.__setattr__(self, "rates", rates)
        if any(r < 0 for r in rates):
            raise ValueError("rates must be non-negative")
        if self.kind == "depolarizing" and any(r > 1 for r in rates):
            raise ValueError("depolarizing probabilities must lie in [0, 1]")
        if self.window < 0:
            raise ValueError("window must be non-negative")
        n = len(rates)
        R = np.eye(n) if self.correlation is None else np.array(self.correlation, dtype=float)
        if R.shape != (n, n):
            raise ValueError(f"correlation must be {n}x{n}")
        if not np.allclose(R, R.T) or not np.allclose(np.diag(R), 1) or np.any(np.abs(R) > 1):
            raise ValueError("correlation must be symmetric with unit diagonal and entries in [-1, 1]")
        if np.linalg.eigvalsh(R).min() < -1e-12:
            raise ValueError("correlation matrix is not positive semidefinite")
        R.setflags(write=False)
        object.__setattr__(self, "correlation", R)
        object.__setattr__(self, "lines", tuple(self.lines))
        for line in self.lines:
            if any(not 0 <= t < n for t in line.targets):
                raise ValueError(f"engineered line targets {line.targets} outside 0..{n - 1}")

    @classmethod
    def flips(cls, p: float, gate: str = "X", n: int = N_QUBITS) -> "ErrorChannel":
        """Independent flips with probability ``p`` on each qubit."""
        return cls("engineered", (0.0,) * n, lines=tuple(EngineeredLine(p, gate, (q,)) for q in range(n)))

    @classmethod
    def deterministic(cls, gate: str, qubit: int, n: int = N_QUBITS) -> "ErrorChannel":
        return cls("engineered", (0.0,) * n, lines=(EngineeredLine(1.0, gate, (qubit,)),))

    @classmethod
    def dephasing(cls, rate: float, correlation: float | np.ndarray = 0.0, window: float = 1.0, n: int = N_QUBITS):
        R = correlation if isinstance(correlation, np.ndarray) else np.full((n, n), float(correlation))
        R = np.array(R, dtype=float)
        np.fill_diagonal(R, 1.0)
        return cls("dephasing", (rate,) * n, R, window)

    @property
    def n_qubits(self) -> int:
        return len(self.rates)

    def covariance(self) -> np.ndarray:
        sig = np.sqrt(2.0 * np.asarray(self.rates) * self.window)
        return self.correlation * np.outer(sig, sig)


def correlation_from_separation(positions: np.ndarray, decay_length: float) -> np.ndarray:
    """exp(-distance / decay_length) between qubit positions."""
    pos = np.asarray(positions, dtype=float)
    d = np.linalg.norm(pos[:, None] - pos[None, :], axis=-1)
    return np.exp(-d / decay_length)


# --- operators on the 3-qubit register --------------------------------------


def _op(single: np.ndarray, q: int, n: int = N_QUBITS) -> np.ndarray:
    """Embed a one-qubit operator; qubit q is bit q of the index."""
    out = np.array([[1.0 + 0j]])
    for k in reversed(range(n)):
        out = np.kron(out, single if k == q else _I2)
    return out


def _cnot(c: int, t: int, n: int = N_QUBITS) -> np.ndarray:
    d = 2**n
    M = np.zeros((d, d), dtype=complex)
    for i in range(d):
        M[i ^ (((i >> c) & 1) << t), i] = 1
    return M


def _ccnot(c1: int, c2: int, t: int, n: int = N_QUBITS) -> np.ndarray:
    d = 2**n
    M = np.zeros((d, d), dtype=complex)
    for i in range(d):
        M[i ^ ((((i >> c1) & 1) & ((i >> c2) & 1)) << t), i] = 1
    return M


def _bits(n: int) -> np.ndarray:
    return np.array([[(i >> q) & 1 for q in range(n)] for i in range(2**n)])


def _dephasing_factor(channel: ErrorChannel) -> np.ndarray:
    n = channel.n_qubits
    z = 1 - 2 * _bits(n)  # +1 for |0>, -1 for |1>
    w = (z[:, None, :] - z[None, :, :]) / 2
    cov = channel.covariance()
    return np.exp(-0.5 * np.einsum("abi,ij,abj->ab", w, cov, w))


def _engineered_terms(channel: ErrorChannel):
    """(probability, unitary) for every subset of fired lines."""
    n = channel.n_qubits
    terms = []
    for fired in itertools.product((0, 1), repeat=len(channel.lines)):
        prob = 1.0
        U = np.eye(2**n, dtype=complex)
        for f, line in zip(fired, channel.lines):
            prob *= line.excitation_fraction if f else 1 - line.excitation_fraction
            if f:
                for t in line.targets:
                    U = _op(PAULIS[line.gate], t, n) @ U
        if prob > 0:
            terms.append((prob, U))
    return terms


def apply_channel(rho: np.ndarray, channel: ErrorChannel) -> np.ndarray:
    """Exact action of the channel on a density matrix over the channel's qubits."""
    n = channel.n_qubits
    if rho.shape != (2**n, 2**n):
        raise ValueError(f"density matrix must be {2**n}x{2**n}")
    if channel.kind == "dephasing":
        return rho * _dephasing_factor(channel)
    if channel.kind == "depolarizing":
        out = rho
        for q, p in enumerate(channel.rates):
            if p == 0:
                continue
            acc = (1 - 3 * p / 4) * out
            for P in (_X, _Y, _Z):
                Pq = _op(P, q, n)
                acc = acc + (p / 4) * Pq @ out @ Pq.conj().T
            out = acc
        return out
    out = np.zeros_like(rho)
    for prob, U in _engineered_terms(channel):
        out = out + prob * U @ rho @ U.conj().T
    return out


def sample_engineered(channel: ErrorChannel, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    """Integer (clusters x qubits) array counting how often each qubit was hit.

    One Bernoulli draw per line and cluster, shared by all its targets.
    """
    hits = np.zeros((n_clusters, channel.n_qubits), dtype=int)
    for line in channel.lines:
        fired = rng.random(n_clusters) < line.excitation_fraction
        for t in line.targets:
            hits[:, t] += fired
    return hits


def apply_channel_trajectories(psis: np.ndarray, channel: ErrorChannel, rng: np.random.Generator) -> np.ndarray:
    """Sample one error realisation per row of ``psis`` (pure states)."""
    n = channel.n_qubits
    M = psis.shape[0]
    out = psis.copy()
    if channel.kind == "dephasing":
        cov = channel.covariance()
        phi = rng.multivariate_normal(np.zeros(n), cov, size=M, method="eigh")
        z = 1 - 2 * _bits(n)
        out *= np.exp(-0.5j * phi @ z.T)
        return out
    if channel.kind == "depolarizing":
        for q, p in enumerate(channel.rates):
            hit = rng.random(M) < p
            which = rng.integers(0, 4, M)
            for k, P in enumerate((_I2, _X, _Y, _Z)):
                sel = hit & (which == k)
                if k and sel.any():
                    out[sel] = out[sel] @ _op(P, q, n).T
        return out
    for line in channel.lines:
        fired = rng.random(M) < line.excitation_fraction
        if fired.any():
            U = np.eye(2**n, dtype=complex)
            for t in line.targets:
                U = _op(PAULIS[line.gate], t, n) @ U
            out[fired] = out[fired] @ U.T
    return out


def process_fidelity(channel: ErrorChannel, qubit: int = 0) -> float:
    """Analytic process fidelity of the channel restricted to one qubit."""
    if channel.kind == "dephasing":
        return 0.5 * (1 + math.exp(-channel.rates[qubit] * channel.window))
    if channel.kind == "depolarizing":
        return 1 - 3 * channel.rates[qubit] / 4
    # distribution over the net Pauli (x, z bits) left on the qubit
    dist = {(0, 0): 1.0}
    for line in channel.lines:
        if qubit not in line.targets:
            continue
        k = line.targets.count(qubit)
        fx, fz = _PAULI_BITS[line.gate]
        fx, fz = fx * k % 2, fz * k % 2
        C = line.excitation_fraction
        nxt = {}
        for (x, z), w in dist.items():
            nxt[(x, z)] = nxt.get((x, z), 0.0) + w * (1 - C)
            nxt[(x ^ fx, z ^ fz)] = nxt.get((x ^ fx, z ^ fz), 0.0) + w * C
        dist = nxt
    return dist.get((0, 0), 0.0)


_PAULI_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}


def channel_process_fidelity_mc(channel: ErrorChannel, qubit: int, n_samples: int, seed: int):
    """Monte Carlo estimate (mean, standard error) of the one-qubit process fidelity."""
    rng = np.random.default_rng(seed)
    n = channel.n_qubits
    # maximally entangled probe of the qubit with a reference
    d = 2**n
    psi = np.zeros((n_samples, d * 2), dtype=complex)
    # reference qubit is an extra high bit; the other register qubits sit in |0>
    psi[:, 0] = psi[:, d + (1 << qubit)] = 1 / math.sqrt(2)
    sys_part = psi.reshape(n_samples, 2, d)
    # replay the generator so both reference branches see the same error draws
    rng_state = rng.bit_generator.state
    a = apply_channel_trajectories(sys_part[:, 0, :], channel, rng)
    rng.bit_generator.state = rng_state
    b = apply_channel_trajectories(sys_part[:, 1, :], channel, rng)
    # amplitudes indexed (sample, ref, rest, probed qubit, rest)
    out = np.stack([a, b], axis=1).reshape(n_samples, 2, 2 ** (n - 1 - qubit), 2, 2**qubit)
    # overlap with the Bell pair on (probed qubit, ref); the rest of the register is traced
    proj = (out[:, 0, :, 0, :] + out[:, 1, :, 1, :]) / math.sqrt(2)
    vals = np.sum(np.abs(proj) ** 2, axis=(1, 2))
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))


# --- protocols ----------------------------------------------------------------


@dataclass(frozen=True)
class ECProtocol:
    name: str
    circuit: tuple[tuple, ...]
    cycles: int = 1

    def __post_init__(self):
        ops = [op[0] for op in self.circuit]
        required = ["cnot", "error", "ccnot", "reset"]
        pos = []
        for r in required:
            if r not in ops:
                raise ValueError(f"circuit lacks a {r} step")
            pos.append(ops.index(r))
        if pos != sorted(pos):
            raise ValueError("circuit must encode, then suffer errors, then correct, then reset")
        if self.cycles < 1:
            raise ValueError("cycles must be at least 1")

    @classmethod
    def bitflip3(cls, cycles: int = 1) -> "ECProtocol":
        return cls("bitflip3", _circuit(False), cycles)

    @classmethod
    def phaseflip3(cls, cycles: int = 1) -> "ECProtocol":
        return cls("phaseflip3", _circuit(True), cycles)

    @classmethod
    def by_name(cls, name: str, cycles: int = 1) -> "ECProtocol":
        if name == "bitflip3":
            return cls.bitflip3(cycles)
        if name == "phaseflip3":
            return cls.phaseflip3(cycles)
        raise ValueError(f"unknown protocol {name!r}")


def _circuit(hadamards: bool) -> tuple[tuple, ...]:
    h = tuple(("h", q) for q in range(3)) if hadamards else ()
    return (
        ("cnot", 0, 1), ("cnot", 0, 2),
        *h, ("error",), *h,
        ("cnot", 0, 1), ("cnot", 0, 2),
        ("ccnot", 1, 2, 0),
        ("reset", 1), ("reset", 2),
    )


def _baseline_steps(protocol: ECProtocol) -> list[tuple]:
    """The error window plus the single-qubit gates that act on the data qubit."""
    return [op for op in protocol.circuit if op[0] == "error" or (op[0] in ("h", "x", "z") and op[1] == 0)]


def _gate_unitary(op) -> np.ndarray:
    if op[0] == "cnot":
        return _cnot(op[1], op[2])
    if op[0] == "ccnot":
        return _ccnot(op[1], op[2], op[3])
    if op[0] == "h":
        return _op(_H, op[1])
    if op[0] == "x":
        return _op(_X, op[1])
    if op[0] == "z":
        return _op(_Z, op[1])
    raise ValueError(f"not a gate: {op}")


def _reset_rho(rho: np.ndarray, q: int) -> np.ndarray:
    r = rho.reshape([2] * 6)  # axes: q2 q1 q0 | q2' q1' q0'
    ax = N_QUBITS - 1 - q
    red = np.trace(r, axis1=ax, axis2=ax + N_QUBITS)
    ket0 = np.array([[1, 0], [0, 0]], dtype=complex)
    full = np.multiply.outer(red, ket0)  # remaining axes then the new pair
    # move the new pair back into position
    rem = [a for a in range(N_QUBITS) if a != ax]
    n_rem = len(rem)
    perm = [None] * 6
    for i, a in enumerate(rem):
        perm[a] = i
        perm[N_QUBITS + a] = n_rem + i
    perm[ax] = 2 * n_rem
    perm[N_QUBITS + ax] = 2 * n_rem + 1
    return full.transpose(perm).reshape(8, 8)


def _reset_psis(psis: np.ndarray, q: int, rng: np.random.Generator) -> np.ndarray:
    """Per-trajectory reset: the ancilla is found in |0> or |1> with the Born
    probabilities and then set to |0>; averaging over trajectories gives the
    trace-and-reinitialise channel."""
    M = psis.shape[0]
    idx = np.arange(8)
    one = ((idx >> q) & 1) == 1
    p1 = np.sum(np.abs(psis[:, one]) ** 2, axis=1)
    pick1 = rng.random(M) < p1
    out = np.zeros_like(psis)
    src0 = idx[~one]
    out[:, src0] = np.where(pick1[:, None], psis[:, src0 | (1 << q)], psis[:, src0])
    norms = np.linalg.norm(out, axis=1)
    return out / norms[:, None]


def _data_state(alpha: complex, beta: complex) -> np.ndarray:
    v = np.array([alpha, beta], dtype=complex)
    if abs(np.vdot(v, v).real - 1) > 1e-10:
        raise ValueError("input logical state must be normalised")
    psi = np.zeros(8, dtype=complex)
    psi[0], psi[1] = alpha, beta
    return psi


def _data_reduced(rho: np.ndarray) -> np.ndarray:
    r = rho.reshape(4, 2, 4, 2)  # (q2 q1) q0 ; (q2' q1') q0'
    return np.einsum("aiaj->ij", r)


@dataclass(frozen=True)
class ProtocolResult:
    fidelity: np.ndarray  # per cycle
    ci_low: np.ndarray
    ci_high: np.ndarray
    baseline_fidelity: np.ndarray
    ancilla_excited: np.ndarray  # per cycle, probability each ancilla was |1> before reset

    @property
    def final_fidelity(self) -> float:
        return float(self.fidelity[-1])


def run_protocol(
    protocol: ECProtocol,
    channel: ErrorChannel,
    logical: tuple[complex, complex] = (1.0, 0.0),
    cycles: int | None = None,
    *,
    mode: str = "exact",
    n_trajectories: int = 10000,
    seed: int = 0,
) -> ProtocolResult:
    """Run the protocol for ``cycles`` cycles.

    The fidelity is <psi|rho_data|psi> of the data qubit against the input
    state.  The baseline leaves the data qubit unencoded: each cycle it only
    sees the circuit's own single-qubit gates on qubit 0 and the error
    window, so both codes are compared against the error they target.  In
    trajectory mode the interval is a normal-approximation 95% interval over
    clusters.
    """
    if channel.n_qubits != N_QUBITS:
        raise ValueError("repetition codes use three qubits")
    cycles = protocol.cycles if cycles is None else cycles
    psi0 = _data_state(*logical)
    target = psi0[:2]
    fids, lo, hi, base, anc = [], [], [], [], []
    if mode == "exact":
        rho = np.outer(psi0, psi0.conj())
        rho_b = rho.copy()
        for _ in range(cycles):
            pre = None
            for op in protocol.circuit:
                if op[0] == "error":
                    rho = apply_channel(rho, channel)
                elif op[0] == "reset":
                    if pre is None:
                        pre = [float(np.real(np.trace(rho @ _op(np.diag([0, 1]).astype(complex), q)))) for q in (1, 2)]
                    rho = _reset_rho(rho, op[1])
                else:
                    U = _gate_unitary(op)
                    rho = U @ rho @ U.conj().T
            for op in _baseline_steps(protocol):
                if op[0] == "error":
                    rho_b = apply_channel(rho_b, channel)
                else:
                    U = _gate_unitary(op)
                    rho_b = U @ rho_b @ U.conj().T
            f = float(np.real(target.conj() @ _data_reduced(rho) @ target))
            fb = float(np.real(target.conj() @ _data_reduced(rho_b) @ target))
            fids.append(f)
            lo.append(f)
            hi.append(f)
            base.append(fb)
            anc.append(pre)
    elif mode == "trajectories":
        root = np.random.SeedSequence(seed)
        rng, rng_b = (np.random.default_rng(s) for s in root.spawn(2))
        M = int(n_trajectories)
        psis = np.tile(psi0, (M, 1))
        psis_b = psis.copy()
        for _ in range(cycles):
            pre = None
            for op in protocol.circuit:
                if op[0] == "error":
                    psis = apply_channel_trajectories(psis, channel, rng)
                elif op[0] == "reset":
                    if pre is None:
                        idx = np.arange(8)
                        pre = [float(np.mean(np.sum(np.abs(psis[:, ((idx >> q) & 1) == 1]) ** 2, axis=1))) for q in (1, 2)]
                    psis = _reset_psis(psis, op[1], rng)
                else:
                    psis = psis @ _gate_unitary(op).T
            for op in _baseline_steps(protocol):
                if op[0] == "error":
                    psis_b = apply_channel_trajectories(psis_b, channel, rng_b)
                else:
                    psis_b = psis_b @ _gate_unitary(op).T
            vals = _traj_fidelity(psis, target)
            f = float(vals.mean())
            se = float(vals.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
            fids.append(f)
            lo.append(f - 1.96 * se)
            hi.append(f + 1.96 * se)
            base.append(float(_traj_fidelity(psis_b, target).mean()))
            anc.append(pre)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ProtocolResult(np.array(fids), np.array(lo), np.array(hi), np.array(base), np.array(anc))


def _traj_fidelity(psis: np.ndarray, target: np.ndarray) -> np.ndarray:
    """<t|rho_data|t> for each pure 3-qubit state."""
    r = psis.reshape(-1, 4, 2)  # (q2 q1), q0
    amp = r @ target.conj()
    return np.sum(np.abs(amp) ** 2, axis=1)


def logical_error_oracle(p: float, n: int = 3) -> float:
    """Probability that a majority vote fails: enumerate all flip patterns."""
    total = 0.0
    for pattern in itertools.product((0, 1), repeat=n):
        k = sum(pattern)
        if k > n // 2:
            total += p**k * (1 - p) ** (n - k)
    return total


def correlation_study(
    protocol: ECProtocol,
    correlations: Sequence[float],
    rate: float,
    cycles: int = 1,
    *,
    window: float = 1.0,
    logical: tuple[complex, complex] | None = None,
    mode: str = "trajectories",
    n_trajectories: int = 20000,
    seed: int = 0,
) -> list[dict]:
    """Logical fidelity under dephasing with uniform pairwise correlation.

    The uncorrelated point (0) is always included.  The default input is
    |0>, which is sensitive to the residual logical flip of either code.  Every correlation value
    reuses the same root seed, so the sweep is reproducible point by point.
    """
    if logical is None:
        # both codes leave a logical X after decoding, which |+> would not see
        logical = (1.0, 0.0)
    values = sorted(set(float(c) for c in correlations) | {0.0})
    rows = []
    for c in values:
        ch = ErrorChannel.dephasing(rate, c, window)
        res = run_protocol(protocol, ch, logical, cycles, mode=mode, n_trajectories=n_trajectories, seed=seed)
        for k in range(cycles):
            rows.append({
                "cycle": k + 1,
                "correlation": c,
                "rate": float(rate),
                "fidelity": float(res.fidelity[k]),
                "ci_low": float(res.ci_low[k]),
                "ci_high": float(res.ci_high[k]),
                "baseline_fidelity": float(res.baseline_fidelity[k]),
            })
    return rows


def write_study_csv(rows: Iterable[dict], fh) -> None:
    cols = ["cycle", "correlation", "rate", "fidelity", "ci_low", "ci_high", "baseline_fidelity"]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([r["cycle"]] + [repr(float(r[c])) for c in cols[1:]])


# --- pulse level -------------------------------------------------------------


def _ion_ops(single: np.ndarray, site: int, n: int) -> np.ndarray:
    """Qubit operator on levels {|0>, |1>} of one ion, identity on |aux>, |e>."""
    loc = np.eye(4, dtype=complex)
    loc[:2, :2] = single
    out = np.array([[1.0 + 0j]])
    for k in reversed(range(n)):
        out = np.kron(out, loc if k == site else np.eye(4))
    return out


def _full_channel(rho: np.ndarray, channel: ErrorChannel, sites: Sequence[int], n: int) -> np.ndarray:
    """The error channel acting on the qubit levels of a full cluster density matrix."""
    if channel.kind == "dephasing":
        idx = np.arange(4**n)
        zvals = np.array([1.0, -1.0, 0.0, 0.0])
        z = np.stack([zvals[(idx // 4**s) % 4] for s in sites], axis=1)
        w = (z[:, None, :] - z[None, :, :]) / 2
        return rho * np.exp(-0.5 * np.einsum("abi,ij,abj->ab", w, channel.covariance(), w))
    if channel.kind == "depolarizing":
        out = rho
        for q, p in enumerate(channel.rates):
            if p == 0:
                continue
            acc = (1 - 3 * p / 4) * out
            for P in (_X, _Y, _Z):
                Pq = _ion_ops(P, sites[q], n)
                acc = acc + (p / 4) * Pq @ out @ Pq.conj().T
            out = acc
        return out
    out = np.zeros_like(rho)
    for fired in itertools.product((0, 1), repeat=len(channel.lines)):
        prob = 1.0
        U = np.eye(4**n, dtype=complex)
        for f, line in zip(fired, channel.lines):
            prob *= line.excitation_fraction if f else 1 - line.excitation_fraction
            if f:
                for t in line.targets:
                    U = _ion_ops(PAULIS[line.gate], sites[t], n) @ U
        if prob > 0:
            out = out + prob * U @ rho @ U.conj().T
    return out


def _reset_ion(rho: np.ndarray, site: int, n: int) -> np.ndarray:
    t = rho.reshape([4] * (2 * n))
    ax = n - 1 - site
    red = np.trace(t, axis1=ax, axis2=ax + n)
    ket0 = np.zeros((4, 4), dtype=complex)
    ket0[0, 0] = 1
    full = np.multiply.outer(red, ket0)
    rem = [a for a in range(n) if a != ax]
    perm = [0] * (2 * n)
    for i, a in enumerate(rem):
        perm[a] = i
        perm[n + a] = len(rem) + i
    perm[ax] = 2 * len(rem)
    perm[n + ax] = 2 * len(rem) + 1
    return full.transpose(perm).reshape(4**n, 4**n)


def pulse_level_protocol(
    protocol: ECProtocol,
    cluster: ClusterSpec,
    noise: NoiseParams | None = None,
    channel: ErrorChannel | None = None,
    *,
    sites: tuple[int, int, int] = (0, 1, 2),
    logical: tuple[complex, complex] = (1.0, 0.0),
    cycles: int = 1,
    drive: DriveModel | None = None,
    rabi: float = 1.0,
) -> dict:
    """Run the protocol with every gate compiled to pulses.

    ``sites`` are the cluster sites of (data, ancilla, ancilla).  The error
    channel acts on the qubit levels during the error window; ``noise``
    applies throughout the pulses.  Returns the corrected fidelity, the
    unencoded baseline (the data ion sees only its own single-qubit gates and
    the error window, see :func:`run_protocol`) and the total pulse time per
    cycle.
    """
    n = len(cluster)
    drive = drive or DriveModel.ideal()
    model = ClusterModel(cluster, drive)
    a, b, c = sites
    q2s = {0: a, 1: b, 2: c}
    gates = {}

    def compiled(op):
        key = op
        if key not in gates:
            if op[0] == "cnot":
                gates[key] = cnot_on(cluster, q2s[op[1]], q2s[op[2]], rabi)
            elif op[0] == "ccnot":
                gates[key] = ccnot_on(cluster, q2s[op[1]], q2s[op[2]], q2s[op[3]], rabi)
            elif op[0] == "h":
                gates[key] = compile_hadamard(q2s[op[1]], rabi)
            else:
                raise ValueError(f"no pulse compilation for {op}")
        return gates[key]

    psi = np.zeros(4**n, dtype=complex)
    psi[0] = logical[0]
    psi[4**a] = logical[1]
    state = ClusterState(np.outer(psi, psi.conj()))
    ch = channel or ErrorChannel("engineered", (0.0, 0.0, 0.0))
    target = np.array(logical, dtype=complex)
    fids, base = [], []
    base_state = state
    pulse_time = 0.0
    for _ in range(cycles):
        pulse_time = 0.0
        for op in protocol.circuit:
            if op[0] == "error":
                state = ClusterState(_full_channel(state.density_matrix, ch, (a, b, c), n), state.time)
            elif op[0] == "reset":
                state = ClusterState(_reset_ion(state.density_matrix, q2s[op[1]], n), state.time)
            else:
                g = compiled(op)
                for p in g.pulses:
                    state = evolve(state, p, model, noise)
                pulse_time += g.duration
        for op in _baseline_steps(protocol):
            if op[0] == "error":
                base_state = ClusterState(_full_channel(base_state.density_matrix, ch, (a, b, c), n), base_state.time)
            else:
                for p in compiled(op).pulses:
                    base_state = evolve(base_state, p, model, noise)
        fids.append(_ion_fidelity(state.density_matrix, a, n, target))
        base.append(_ion_fidelity(base_state.density_matrix, a, n, target))
    return {"fidelity": np.array(fids), "baseline_fidelity": np.array(base), "pulse_time_per_cycle": pulse_time}


def _ion_fidelity(rho: np.ndarray, site: int, n: int, target: np.ndarray) -> float:
    red = ClusterState(rho).reduced(site)[:2, :2]
    return float(np.real(target.conj() @ red @ target))
