import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from spincluster.model import ClusterSpec
from spincluster.pulsesim import DriveModel, NoiseParams
from spincluster.qec import (
    ECProtocol,
    EngineeredLine,
    ErrorChannel,
    _bits,
    _reset_rho,
    apply_channel,
    apply_channel_trajectories,
    channel_process_fidelity_mc,
    correlation_from_separation,
    correlation_study,
    logical_error_oracle,
    process_fidelity,
    pulse_level_protocol,
    run_protocol,
    sample_engineered,
    write_study_csv,
)

CORRECTS = {"bitflip3": "X", "phaseflip3": "Z"}


def random_rho(rng, d=8):
    G = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = G @ G.conj().T
    return rho / np.trace(rho)


def logical_strategy():
    return st.tuples(st.floats(0, math.pi), st.floats(0, 2 * math.pi)).map(
        lambda t: (math.cos(t[0] / 2), complex(math.sin(t[0] / 2) * np.exp(1j * t[1])))
    )


# ---------------------------------------------------------------- channels

def test_channel_validation():
    with pytest.raises(ValueError):
        ErrorChannel("bitflip")
    with pytest.raises(ValueError):
        ErrorChannel("dephasing", (0.1, 0.1, 0.1), np.array([[1, 2, 0], [2, 1, 0], [0, 0, 1.0]]))
    with pytest.raises(ValueError, match="semidefinite"):
        ErrorChannel.dephasing(0.1, -0.9)
    with pytest.raises(ValueError):
        ErrorChannel("engineered", (0, 0, 0), lines=(EngineeredLine(0.1, "X", (5,)),))
    with pytest.raises(ValueError):
        EngineeredLine(1.5)


def test_independent_flips_on_ground_state():
    p = 0.2
    rho = np.zeros((8, 8), dtype=complex)
    rho[0, 0] = 1
    out = apply_channel(rho, ErrorChannel.flips(p))
    k = _bits(3).sum(axis=1)
    np.testing.assert_allclose(np.diag(out).real, p**k * (1 - p) ** (3 - k), atol=1e-14)


def test_single_qubit_dephasing_calibration():
    rate, window = 0.3, 2.0
    plus = np.zeros(8, dtype=complex)
    plus[0] = plus[1] = 1 / math.sqrt(2)
    out = apply_channel(np.outer(plus, plus), ErrorChannel.dephasing(rate, 0.0, window))
    assert abs(out[0, 1]) == pytest.approx(0.5 * math.exp(-rate * window), rel=1e-12)


@pytest.mark.parametrize("rho_c", [0.0, 0.4, 1.0, -0.3])
def test_dephasing_factors_match_characteristic_function(rho_c):
    ch = ErrorChannel.dephasing(0.2, rho_c, 1.5)
    rho = random_rho(np.random.default_rng(1))
    out = apply_channel(rho, ch)
    z = 1 - 2 * _bits(3)
    for a in range(8):
        for b in range(8):
            f = oracles.gaussian_phase_coherence(ch.covariance(), (z[a] - z[b]) / 2)
            assert out[a, b] == pytest.approx(rho[a, b] * f, abs=1e-14)


def test_full_correlation_doubles_even_parity_decay():
    rate, w = 0.2, 1.0
    unc = math.exp(-rate * w)
    ch = ErrorChannel.dephasing(rate, 1.0, w, n=2)
    f = np.ones((4, 4))
    out = apply_channel(f.astype(complex), ch)
    # uncorrelated, 00 <-> 11 decays as unc^2; fully correlated the exponent
    # doubles, while 01 <-> 10 does not decay at all
    assert out[0b00, 0b11].real == pytest.approx(unc**4, rel=1e-12)
    assert out[0b01, 0b10].real == pytest.approx(1.0, abs=1e-14)
    ind = apply_channel(f.astype(complex), ErrorChannel.dephasing(rate, 0.0, w, n=2))
    assert out[0b00, 0b11].real == pytest.approx(ind[0b00, 0b11].real ** 2, rel=1e-12)


def test_depolarizing_fully_mixes_at_one():
    rho = random_rho(np.random.default_rng(2), 2)
    out = apply_channel(rho, ErrorChannel("depolarizing", (1.0,)))
    np.testing.assert_allclose(out, np.eye(2) / 2, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["dephasing", "depolarizing", "engineered"]))
def test_channels_are_trace_preserving_and_positive(seed, kind):
    rng = np.random.default_rng(seed)
    if kind == "dephasing":
        ch = ErrorChannel.dephasing(float(rng.uniform(0, 1)), float(rng.uniform(-0.4, 1)))
    elif kind == "depolarizing":
        ch = ErrorChannel("depolarizing", tuple(rng.uniform(0, 1, 3)))
    else:
        ch = ErrorChannel("engineered", (0, 0, 0), lines=(EngineeredLine(float(rng.uniform()), "Y", (0, 2)),
                                                         EngineeredLine(float(rng.uniform()), "Z", (1,))))
    out = apply_channel(random_rho(rng), ch)
    assert np.trace(out).real == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.eigvalsh(out).min() > -1e-12


@pytest.mark.parametrize("ch,qubit", [
    (ErrorChannel.dephasing(0.3, 0.5, 1.0), 0),
    (ErrorChannel("depolarizing", (0.2, 0.0, 0.1)), 2),
    (ErrorChannel("engineered", (0, 0, 0), lines=(EngineeredLine(0.3, "X", (0, 1)), EngineeredLine(0.2, "Z", (0,)))), 0),
    (ErrorChannel.flips(0.1), 1),
])
def test_process_fidelity_monte_carlo_calibration(ch, qubit):
    exact = process_fidelity(ch, qubit)
    mean, se = channel_process_fidelity_mc(ch, qubit, 20_000, seed=3)
    assert abs(mean - exact) <= 3 * se + 1e-12


def test_untouched_qubit_has_unit_process_fidelity():
    ch = ErrorChannel.deterministic("X", 0)
    assert process_fidelity(ch, 1) == 1.0
    mean, se = channel_process_fidelity_mc(ch, 1, 100, seed=0)
    assert mean == pytest.approx(1.0, abs=1e-12) and se < 1e-12


def test_dephasing_trajectories_average_to_the_channel():
    ch = ErrorChannel.dephasing(0.4, 0.6, 1.0)
    rng = np.random.default_rng(4)
    psi = np.full(8, 1 / math.sqrt(8), dtype=complex)
    out = apply_channel_trajectories(np.tile(psi, (40_000, 1)), ch, rng)
    emp = np.einsum("ka,kb->ab", out, out.conj()) / out.shape[0]
    exact = apply_channel(np.outer(psi, psi.conj()), ch)
    assert np.max(np.abs(emp - exact)) < 5 / math.sqrt(out.shape[0])


def test_engineered_fraction():
    C, n = 0.1, 100_000
    hits = sample_engineered(ErrorChannel.flips(C), n, np.random.default_rng(6))
    frac = hits[:, 0].mean()
    assert abs(frac - C) < 3 * math.sqrt(C * (1 - C) / n)


def test_engineered_lines_co_occur():
    lines = (EngineeredLine(0.3, "X", (0, 1)), EngineeredLine(0.2, "X", (2,)))
    ch = ErrorChannel("engineered", (0, 0, 0), lines=lines)
    n = 200_000
    hits = sample_engineered(ch, n, np.random.default_rng(7))
    # one line, shared targets: always together
    assert np.array_equal(hits[:, 0], hits[:, 1])
    # separate lines: independent
    both = np.mean((hits[:, 0] > 0) & (hits[:, 2] > 0))
    assert abs(both - 0.06) < 3 * math.sqrt(0.06 * 0.94 / n)


def test_correlation_from_separation():
    R = correlation_from_separation(np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0]]), 2.0)
    assert R[0, 1] == pytest.approx(math.exp(-0.5))
    assert np.all(np.diag(R) == 1)
    ErrorChannel("dephasing", (0.1, 0.1, 0.1), R)


# ---------------------------------------------------------------- protocols

def test_protocol_validation():
    with pytest.raises(ValueError):
        ECProtocol("bad", (("error",), ("cnot", 0, 1), ("ccnot", 1, 2, 0), ("reset", 1)))
    with pytest.raises(ValueError):
        ECProtocol.by_name("steane")


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["bitflip3", "phaseflip3"]), st.integers(0, 2), logical_strategy())
def test_any_single_error_is_corrected(name, qubit, logical):
    ch = ErrorChannel.deterministic(CORRECTS[name], qubit)
    res = run_protocol(ECProtocol.by_name(name), ch, logical, cycles=2)
    assert np.all(res.fidelity > 1 - 1e-9)


@settings(max_examples=10, deadline=None)
@given(st.sampled_from(["bitflip3", "phaseflip3"]), st.lists(st.integers(0, 2), min_size=2, max_size=2, unique=True))
def test_two_errors_are_not_corrected(name, qubits):
    lines = tuple(EngineeredLine(1.0, CORRECTS[name], (q,)) for q in qubits)
    res = run_protocol(ECProtocol.by_name(name), ErrorChannel("engineered", (0, 0, 0), lines=lines))
    assert res.final_fidelity < 1e-9


@pytest.mark.parametrize("p", [0.01, 0.05, 0.1])
@pytest.mark.parametrize("name", ["bitflip3", "phaseflip3"])
def test_logical_error_matches_enumeration(name, p):
    ref = oracles.majority_failure_enumerated(p)
    assert ref == pytest.approx(oracles.majority_failure_closed_form(p), abs=1e-15)
    assert logical_error_oracle(p) == pytest.approx(ref, abs=1e-15)
    ch = ErrorChannel.flips(p, CORRECTS[name])
    exact = run_protocol(ECProtocol.by_name(name), ch)
    assert 1 - exact.final_fidelity == pytest.approx(ref, abs=1e-12)
    mc = run_protocol(ECProtocol.by_name(name), ch, mode="trajectories", n_trajectories=40_000, seed=5)
    se = (mc.ci_high[0] - mc.ci_low[0]) / (2 * 1.96)
    assert abs((1 - mc.final_fidelity) - ref) <= 3 * se + 1e-12


def test_baseline_sees_the_bare_error():
    res = run_protocol(ECProtocol.bitflip3(), ErrorChannel.flips(0.1))
    assert res.baseline_fidelity[0] == pytest.approx(0.9)
    res = run_protocol(ECProtocol.phaseflip3(), ErrorChannel.flips(0.1, "Z"))
    assert res.baseline_fidelity[0] == pytest.approx(0.9)


def test_multi_cycle_fidelity_decreases():
    res = run_protocol(ECProtocol.bitflip3(), ErrorChannel.flips(0.05), cycles=4)
    assert np.all(np.diff(res.fidelity) < 0)
    assert np.all(res.fidelity > res.baseline_fidelity)


def test_ancilla_syndrome_probability():
    res = run_protocol(ECProtocol.bitflip3(), ErrorChannel.deterministic("X", 1))
    # after the majority vote the ancilla that was hit still carries the syndrome
    assert res.ancilla_excited[0][0] == pytest.approx(1.0)


def test_unknown_mode():
    with pytest.raises(ValueError):
        run_protocol(ECProtocol.bitflip3(), ErrorChannel.flips(0.1), mode="tensor")


def test_unnormalised_logical():
    with pytest.raises(ValueError):
        run_protocol(ECProtocol.bitflip3(), ErrorChannel.flips(0.1), logical=(1.0, 1.0))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 2))
def test_reset_is_a_valid_channel(seed, q):
    rho = random_rho(np.random.default_rng(seed))
    out = _reset_rho(rho, q)
    assert np.trace(out).real == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.eigvalsh(out).min() > -1e-12
    ones = ((np.arange(8) >> q) & 1) == 1
    assert np.abs(out[ones]).max() < 1e-15
    # the rest of the register is untouched: compare the reduced state of the other two qubits

    def reduced(r):
        t = r.reshape([2] * 6)
        ax = 2 - q
        return np.trace(t, axis1=ax, axis2=ax + 3)

    np.testing.assert_allclose(reduced(out), reduced(rho), atol=1e-14)


# ---------------------------------------------------------------- correlation study

def test_correlation_study_is_reproducible():
    kw = dict(rate=0.2, window=1.0, n_trajectories=3000, seed=9)
    a = correlation_study(ECProtocol.phaseflip3(), [0.5, 1.0], **kw)
    b = correlation_study(ECProtocol.phaseflip3(), [1.0, 0.5], **kw)
    assert a == b
    assert [r["correlation"] for r in a] == [0.0, 0.5, 1.0]
    buf = io.StringIO()
    write_study_csv(a, buf)
    assert buf.getvalue().splitlines()[0] == "cycle,correlation,rate,fidelity,ci_low,ci_high,baseline_fidelity"


def test_uncorrelated_point_agrees_with_exact():
    rows = correlation_study(ECProtocol.phaseflip3(), [], rate=0.2, window=1.0, n_trajectories=20_000, seed=2)
    exact = run_protocol(ECProtocol.phaseflip3(), ErrorChannel.dephasing(0.2, 0.0, 1.0))
    r = rows[0]
    half = (r["ci_high"] - r["ci_low"]) / 2
    assert abs(r["fidelity"] - exact.final_fidelity) <= 1.6 * half


def test_correlation_hurts_the_code():
    rows = correlation_study(ECProtocol.phaseflip3(), [1.0], rate=0.2, window=1.0, mode="exact")
    assert rows[1]["fidelity"] < rows[0]["fidelity"]
    assert rows[0]["baseline_fidelity"] == rows[1]["baseline_fidelity"]


# ---------------------------------------------------------------- pulse level

def _cluster():
    return ClusterSpec.explicit([0.0, 300.0, 600.0], {(0, 1): 30.0, (0, 2): 30.0, (1, 2): 30.0})


@pytest.mark.parametrize("name,channel", [
    ("bitflip3", ErrorChannel.flips(0.1)),
    ("phaseflip3", ErrorChannel.flips(0.1, "Z")),
    ("phaseflip3", ErrorChannel.dephasing(0.3, 0.5, 1.0)),
])
def test_pulse_level_matches_gate_level(name, channel):
    proto = ECProtocol.by_name(name)
    logical = (0.6, 0.8j)
    pulse = pulse_level_protocol(proto, _cluster(), channel=channel, logical=logical, drive=DriveModel.ideal())
    gate = run_protocol(proto, channel, logical)
    assert pulse["fidelity"][0] == pytest.approx(gate.final_fidelity, abs=1e-6)
    assert pulse["baseline_fidelity"][0] == pytest.approx(gate.baseline_fidelity[0], abs=1e-6)


def test_pulse_level_optical_dephasing_costs_fidelity():
    proto = ECProtocol.bitflip3()
    # |0> would never excite an ion, so probe with a superposition
    logical = (0.6, 0.8)
    clean = pulse_level_protocol(proto, _cluster(), logical=logical)
    assert clean["fidelity"][0] == pytest.approx(1.0, abs=1e-9)
    t2 = 100 * clean["pulse_time_per_cycle"]
    noisy = pulse_level_protocol(proto, _cluster(), NoiseParams(optical_T2=t2), logical=logical)
    assert 0.5 < noisy["fidelity"][0] < 1.0
