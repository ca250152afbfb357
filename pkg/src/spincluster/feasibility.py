"""Closed-form materials estimates: how many qubits a crystal can support.

All counts are evaluated continuously and floored at the end.  Lengths follow
:class:`~spincluster.model.MaterialParams`: volumes in cubic angstrom, crystal
length in mm, beam diameter in um, linewidths in MHz.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from .model import MaterialParams

__all__ = [
    "FeasibilityReport",
    "MAX_QUBITS",
    "memory_qubit_count",
    "computing_qubit_count",
    "cluster_count",
    "resolvable_radius",
    "resolvable_line_count",
    "connectivity_estimate",
    "reference_concentration_ppb",
    "feasibility_report",
    "format_table",
]

# Upper limit on the qubit-count search; reached only when the feature is as
# wide as the line, where every qubit keeps the whole population.
MAX_QUBITS = 64

_A3_PER_MM3 = 1e21


def _ratio(gq: float, gline: float) -> float:
    if gq <= 0 or gline <= 0:
        raise ValueError("linewidths must be positive")
    if gq > gline:
        raise ValueError(f"feature width {gq} MHz exceeds the line width {gline} MHz")
    return gq / gline


def memory_qubit_count(m: MaterialParams, gamma_q: float) -> dict:
    """Number of memory qubits above the concentration threshold.

    The k-th qubit (k = 1, 2, ...) keeps a fraction (gamma_q / gamma_tot)^k of
    the dopant concentration: one factor for its own feature and one for each
    earlier qubit that had to be in its feature.
    """
    r = _ratio(gamma_q, m.total_linewidth)
    conc = []
    n = 0
    for k in range(1, MAX_QUBITS + 1):
        c = m.doping_fraction * 1e9 * r**k
        conc.append(c)
        if c < m.concentration_threshold_ppb:
            break
        n = k
    return {"n": n, "concentration_ppb": conc}


def reference_concentration_ppb(doping_fraction: float, line_width: float, feature_width: float) -> float:
    """Concentration left in one feature of the inhomogeneous line, in ppb."""
    return doping_fraction * 1e9 * _ratio(feature_width, line_width)


def cluster_count(m: MaterialParams) -> float:
    """Dopant clusters inside the beam volume."""
    radius_mm = m.beam_diameter * 1e-3 / 2
    volume_a3 = math.pi * radius_mm**2 * m.crystal_length * _A3_PER_MM3
    return volume_a3 / m.volume_per_ion * m.doping_fraction


def computing_qubit_count(m: MaterialParams, gamma_q: float, gamma_inh: float | None = None) -> dict:
    """Largest n whose surviving cluster count reaches the detection limit.

    ``gamma_inh`` is the optical inhomogeneous linewidth of the host; it
    defaults to the intrinsic plus dopant linewidth of ``m``.
    """
    gline = m.total_linewidth if gamma_inh is None else gamma_inh
    r = _ratio(gamma_q, gline)
    total = cluster_count(m)
    surviving = []
    n = 0
    for k in range(1, MAX_QUBITS + 1):
        s = total * r ** (k - 1)
        surviving.append(s)
        if s < m.detection_min_ions:
            break
        n = k
    return {"n": n, "cluster_count": total, "surviving_ions": surviving}


def resolvable_radius(m: MaterialParams) -> float:
    """Distance (A) out to which the dipolar shift exceeds the resolvable minimum."""
    return m.nn_distance * (m.nn_shift / m.min_resolvable_shift) ** (1 / 3)


def _sites_within(radius: float, volume_per_ion: float) -> float:
    return 4 * math.pi / 3 * radius**3 / volume_per_ion


def resolvable_line_count(m: MaterialParams) -> int:
    """Satellite lines with shifts above the resolution limit.

    Sites related by the site symmetry share a line, so the site count is
    divided by ``symmetry_factor``.
    """
    return math.floor(_sites_within(resolvable_radius(m), m.volume_per_ion) / m.symmetry_factor)


def connectivity_estimate(m: MaterialParams) -> int:
    """Number of neighbours whose interaction exceeds ``min_interaction``.

    Each neighbour is counted, whether or not it shares a satellite line
    with another.
    """
    r = m.interaction_ref_distance * (m.interaction_ref / m.min_interaction) ** (1 / 3)
    return math.floor(_sites_within(r, m.volume_per_ion))


@dataclass(frozen=True)
class FeasibilityReport:
    memory_qubits: int
    computing_qubits: int
    resolvable_lines: int
    connectivity_degree: int
    concentration_ppb: tuple[float, ...]
    surviving_ions: tuple[float, ...]
    cluster_count: float
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("memory_qubits", "computing_qubits", "resolvable_lines", "connectivity_degree"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["concentration_ppb"] = list(self.concentration_ppb)
        d["surviving_ions"] = list(self.surviving_ions)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_inputs(cls, inputs: dict) -> "FeasibilityReport":
        """Recompute a report from its echoed inputs."""
        inputs = dict(inputs)
        m = MaterialParams(**inputs["material"])
        return feasibility_report(m, inputs["gamma_q_memory"], inputs["gamma_q_computing"], inputs["gamma_inh"])


def feasibility_report(
    m: MaterialParams,
    gamma_q_memory: float = 1.0,
    gamma_q_computing: float = 1.0,
    gamma_inh: float | None = None,
) -> FeasibilityReport:
    mem = memory_qubit_count(m, gamma_q_memory)
    comp = computing_qubit_count(m, gamma_q_computing, gamma_inh)
    inputs = {
        "material": dataclasses.asdict(m),
        "gamma_q_memory": gamma_q_memory,
        "gamma_q_computing": gamma_q_computing,
        "gamma_inh": gamma_inh,
    }
    return FeasibilityReport(
        memory_qubits=mem["n"],
        computing_qubits=comp["n"],
        resolvable_lines=resolvable_line_count(m),
        connectivity_degree=connectivity_estimate(m),
        concentration_ppb=tuple(mem["concentration_ppb"]),
        surviving_ions=tuple(comp["surviving_ions"]),
        cluster_count=comp["cluster_count"],
        inputs=inputs,
    )


def format_table(report: FeasibilityReport) -> str:
    rows = [
        ("memory qubits", str(report.memory_qubits)),
        ("computing qubits", str(report.computing_qubits)),
        ("resolvable satellite lines", str(report.resolvable_lines)),
        ("connectivity degree", str(report.connectivity_degree)),
        ("clusters in beam", f"{report.cluster_count:.4g}"),
    ]
    rows += [(f"concentration, qubit {k + 1} (ppb)", f"{c:.4g}") for k, c in enumerate(report.concentration_ppb)]
    rows += [(f"surviving clusters, n={k + 1}", f"{s:.4g}") for k, s in enumerate(report.surviving_ions)]
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows) + "\n"
