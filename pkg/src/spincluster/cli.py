"""Command-line scenario runner.

    spincluster simulate cnot --ideal
    spincluster feasibility --config configs/euCl3.toml
    spincluster qec --protocol phaseflip3 --seed 3 --out-dir runs/qec

Every run writes its result files plus ``manifest.json`` into ``--out-dir``.
Each output starts with the package version and the configuration hash (a
``#`` comment line in CSV, a ``meta`` entry in JSON).  Nothing time-dependent
is written, so a rerun with the same configuration and seed reproduces every
file byte for byte.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import ensemble as ens
from . import feasibility as feas
from . import photonic as ph
from . import qec
from .config import ConfigError, config_hash, load_config
from .model import ClusterSpec, MaterialParams
from .pulsesim.compiler import (
    UncompilableGate,
    beamsplitter_on,
    ccnot_on,
    cnot_on,
    compile_hadamard,
    compile_not,
    embed_pattern,
    swap7_on,
)
from .pulsesim.dynamics import (
    ClusterModel,
    ClusterState,
    DriveModel,
    NoiseParams,
    NumericalFailure,
    run_sequence,
    sequence_unitary,
)
from .pulsesim.fidelity import fidelity_sweep, gate_fidelity

log = logging.getLogger("spincluster")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

GATES = ("not", "cnot", "ccnot", "hadamard", "swap7", "beamsplitter")
_DEFAULT_SITES = {"not": (0,), "hadamard": (0,), "cnot": (0, 1), "ccnot": (0, 1, 2), "swap7": (0, 1), "beamsplitter": (0, 1)}


class Run:
    """Collects the files of one command and writes them with the manifest."""

    def __init__(self, args, cfg: dict):
        self.args = args
        self.cfg = cfg
        self.seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        resolved = dict(cfg)
        resolved["seed"] = self.seed
        self.hash = config_hash({"command": args.command, "config": resolved, "argv": _argv_key(args)})
        self.files: dict[str, bytes] = {}
        self.results: dict = {}

    @property
    def header(self) -> str:
        return f"# spincluster {__version__} config_sha256={self.hash}\n"

    def add_csv(self, name: str, writer) -> None:
        buf = io.StringIO()
        buf.write(self.header)
        writer(buf)
        self.files[name + ".csv"] = buf.getvalue().encode()

    def add_json(self, name: str, payload) -> None:
        doc = {"meta": {"version": __version__, "config_sha256": self.hash}, "data": payload}
        self.files[name + ".json"] = (json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n").encode()

    def add(self, name: str, rows: list[dict], columns: list[str]) -> None:
        """Tabular output in the requested format."""
        if self.args.format == "json":
            self.add_json(name, rows)
        else:
            self.add_csv(name, lambda fh: _write_rows(fh, rows, columns))

    def write(self) -> Path:
        out = Path(self.args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, blob in sorted(self.files.items()):
            (out / name).write_bytes(blob)
        manifest = {
            "tool": "spincluster",
            "version": __version__,
            "command": self.args.command,
            "seed": self.seed,
            "config": self.cfg,
            "config_sha256": self.hash,
            "git_describe": _git_describe(),
            "outputs": {n: hashlib.sha256(b).hexdigest() for n, b in sorted(self.files.items())},
            "results": self.results,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
        return out


def _argv_key(args) -> dict:
    skip = {"out_dir", "func", "config"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _jsonable(x):
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(fh, rows, columns) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])


def _git_describe() -> str:
    try:
        res = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return res.stdout.strip() or "unknown"


# --- shared config pieces -------------------------------------------------------


def _pairs(rows, where: str) -> dict[tuple[int, int], float]:
    out = {}
    for i, r in enumerate(rows):
        if len(r) != 3 or int(r[0]) != r[0] or int(r[1]) != r[1]:
            raise ConfigError(f"{where}[{i}]: expected [site_i, site_j, delta_mhz]")
        out[(int(r[0]), int(r[1]))] = float(r[2])
    return out


def _cluster(cfg: dict) -> ClusterSpec:
    c = cfg.get("cluster", {})
    shifts = c.get("shifts", [0.0, 300.0, 600.0])
    default = {(i, j): 30.0 for i in range(len(shifts)) for j in range(i + 1, len(shifts))}
    inter = _pairs(c["interactions"], "cluster.interactions") if "interactions" in c else default
    try:
        return ClusterSpec.explicit([float(s) for s in shifts], inter)
    except ValueError as exc:
        raise ConfigError(f"cluster: {exc}") from exc


def _drive(cfg: dict, ideal_flag: bool) -> DriveModel:
    d = dict(cfg.get("drive", {}))
    if ideal_flag or d.pop("ideal", False):
        return DriveModel.ideal(d.get("window", 5.0))
    return _build(DriveModel, d, "drive")


def _noise(cfg: dict) -> NoiseParams | None:
    n = cfg.get("noise")
    return None if not n else _build(NoiseParams, n, "noise")


def _build(cls, kwargs: dict, where: str):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _bits(pattern: int, n: int) -> str:
    """Qubit values in site order, first site first."""
    return "".join(str((pattern >> q) & 1) for q in range(n))


# --- commands ---------------------------------------------------------------------


def _compile(gate: str, cluster: ClusterSpec, sites, rabi: float, sim: dict):
    kw = {"compensate_stark": sim["compensate_stark"]} if "compensate_stark" in sim else {}
    try:
        if gate == "not":
            return compile_not(sites[0], rabi)
        if gate == "hadamard":
            return compile_hadamard(sites[0], rabi)
        if gate == "cnot":
            return cnot_on(cluster, sites[0], sites[1], rabi, **kw)
        if gate == "ccnot":
            return ccnot_on(cluster, sites[0], sites[1], sites[2], rabi, **kw)
        if gate == "swap7":
            return swap7_on(cluster, sites[0], sites[1], rabi)
        return beamsplitter_on(cluster, sites[0], sites[1], sim.get("theta", math.pi / 2), sim.get("phi", 0.0), rabi)
    except UncompilableGate as exc:
        raise ConfigError(f"simulate: {exc}") from exc


def cmd_simulate(run: Run) -> None:
    args, cfg = run.args, run.cfg
    sim = cfg.get("simulate", {})
    gate_name = args.gate or sim.get("gate", "cnot")
    if gate_name not in GATES:
        raise ConfigError(f"simulate.gate: unknown gate {gate_name!r}; choose from {', '.join(GATES)}")
    cluster = _cluster(cfg)
    sites = tuple(sim.get("sites", _DEFAULT_SITES[gate_name]))
    if len(sites) != len(_DEFAULT_SITES[gate_name]) or any(not 0 <= s < len(cluster) for s in sites):
        raise ConfigError(f"simulate.sites: {gate_name} needs {len(_DEFAULT_SITES[gate_name])} sites of the cluster")
    rabi = float(args.rabi if args.rabi is not None else sim.get("rabi", 1.0))
    drive = _drive(cfg, args.ideal)
    noise = _noise(cfg)
    gate = _compile(gate_name, cluster, sites, rabi, sim)
    model = ClusterModel(cluster, drive)
    n = len(gate.sites)
    rows = []
    for p_in in gate.subspace:
        levels = [0] * len(cluster)
        for q, s in enumerate(gate.sites):
            levels[s] = (p_in >> q) & 1
        out = run_sequence(ClusterState.product(levels), gate.pulses, model, noise)
        pops = out.populations()
        for p_out in gate.subspace:
            rows.append({"input": _bits(p_in, n), "output": _bits(p_out, n),
                         "probability": float(pops[embed_pattern(p_out, gate.sites)])})
    fid = gate_fidelity(gate, cluster, noise=noise, drive=drive)
    run.add(f"simulate_{gate_name}", rows, ["input", "output", "probability"])
    run.results.update({"gate": gate_name, "sites": list(gate.sites), "fidelity": fid.mean,
                        "duration_us": gate.duration, "pulses": len(gate.pulses)})
    print(f"{gate_name} on sites {list(gate.sites)}: average fidelity {fid.mean:.10f} "
          f"({len(gate.pulses)} pulses, {gate.duration:g} us)")
    omegas = args.omegas or sim.get("omegas")
    if omegas:
        sweep = fidelity_sweep(lambda om: _compile(gate_name, cluster, sites, om, sim), cluster, omegas,
                               float(sim.get("sigma", 0.0)), n_samples=int(sim.get("n_samples", 1)),
                               noise=noise, drive=drive, seed=run.seed)
        run.add(f"sweep_{gate_name}", sweep, ["omega_mhz", "sigma_mhz", "mean_fidelity", "stderr"])


def cmd_ensemble(run: Run) -> None:
    e = dict(run.cfg.get("ensemble", {}))
    inter = e.pop("interactions", None)
    det_min = float(e.pop("detection_min_ions", 1e4))
    shot = bool(e.pop("shot_noise", False))
    e.setdefault("n_clusters", 100000)
    spec = _build(ens.EnsembleSpec, {**e, "seed": run.seed}, "ensemble")
    pairs = ({(i, j): 30.0 for i in range(spec.n_sites) for j in range(i + 1, spec.n_sites)}
             if inter is None else _pairs(inter, "ensemble.interactions"))
    if any(not (0 <= i < spec.n_sites and 0 <= j < spec.n_sites) for i, j in pairs):
        raise ConfigError("ensemble.interactions: site index outside the cluster")
    state = ens.prepare_all(ens.sample_detunings(spec))
    state = ens.distill(state, pairs)
    reads = [ens.readout(state, s, det_min, shot_noise=shot, seed=run.seed) for s in range(spec.n_sites)]
    step_buf = io.StringIO()
    ens.write_steps_csv(state, step_buf)
    steps = list(csv.DictReader(io.StringIO(step_buf.getvalue())))
    run.add("ensemble_steps", steps, ["step", "site", "class", "count"])
    rrows = [{"site": r.site, "signal": r.signal, "survivors": r.survivors, "detectable": r.detectable} for r in reads]
    run.add("ensemble_readout", rrows, ["site", "signal", "survivors", "detectable"])
    expected = ens.yield_estimate(spec.feature_width, spec.line_width, spec.n_sites)
    run.results.update({"survivors": int(len(state.survivors())), "n_clusters": spec.n_clusters,
                        "expected_fraction_closed_form": expected})
    print(f"{len(state.survivors())} of {spec.n_clusters} clusters survive distillation")


def _pattern_label(pat) -> str:
    return "vac" if not pat else " ".join("".join(str(l) for l in t) for t in pat)


def cmd_photonic(run: Run) -> None:
    p = run.cfg.get("photonic", {})
    modes = list(p.get("modes", ["A", "B"]))
    inputs = p.get("inputs", [[0.6, 0.8], [1.0, 0.0]][: len(modes)] if len(modes) <= 2 else None)
    if inputs is None or len(inputs) != len(modes):
        raise ConfigError("photonic.inputs: give one Fock amplitude vector per mode")
    try:
        state = ph.store(dict(zip(modes, inputs)), float(p.get("n_ensemble", math.inf)))
        ops = ph.parse_circuit(p.get("circuit", "cnot A B"))
        state = ph.run_circuit(state, ops)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"photonic: {exc}") from exc
    amps = state.amplitudes
    eff = None
    if "crystal_length_mm" in p:
        offsets = p.get("frequency_offsets_ghz", [0.0] * len(modes))
        if len(offsets) != len(modes):
            raise ConfigError("photonic.frequency_offsets_ghz: give one offset per mode")
        rec = ph.recall(state, float(p["crystal_length_mm"]), dict(zip(modes, offsets)))
        amps, eff = rec["amplitudes"], rec["phase_efficiency"]
    rows = [{"pattern": _pattern_label(k), "re": complex(a).real, "im": complex(a).imag, "probability": abs(a) ** 2}
            for k, a in sorted(amps.items()) if abs(a) > 1e-14]
    run.add("photonic_patterns", rows, ["pattern", "re", "im", "probability"])
    run.results.update({"modes": modes, "norm": state.norm(), "diagnostics": state.diagnostics,
                        "phase_efficiency": eff})
    for r in rows:
        print(f"{r['pattern']:>16}  {r['re']:+.6f} {r['im']:+.6f}i")


def cmd_qec(run: Run) -> None:
    q = run.cfg.get("qec", {})
    name = run.args.protocol or q.get("protocol", "bitflip3")
    try:
        protocol = qec.ECProtocol.by_name(name)
        rows = qec.correlation_study(
            protocol,
            q.get("correlations", [0.0, 0.5, 1.0]),
            float(q.get("rate", 0.1)),
            int(q.get("cycles", 3)),
            window=float(q.get("window", 1.0)),
            mode=q.get("mode", "trajectories"),
            n_trajectories=int(q.get("n_trajectories", 20000)),
            seed=run.seed,
        )
    except ValueError as exc:
        raise ConfigError(f"qec: {exc}") from exc
    run.add(f"qec_{name}", rows, ["cycle", "correlation", "rate", "fidelity", "ci_low", "ci_high", "baseline_fidelity"])
    run.results.update({"protocol": name, "rows": len(rows)})
    for r in rows:
        print(f"cycle {r['cycle']} correlation {r['correlation']:+.2f}: fidelity {r['fidelity']:.5f} "
              f"[{r['ci_low']:.5f}, {r['ci_high']:.5f}] baseline {r['baseline_fidelity']:.5f}")


def cmd_feasibility(run: Run) -> None:
    m = _build(MaterialParams, run.cfg.get("material", {}), "material")
    f = run.cfg.get("feasibility", {})
    try:
        rep = feas.feasibility_report(m, float(f.get("gamma_q_memory", 1.0)), float(f.get("gamma_q_computing", 1.0)),
                                      f.get("gamma_inh"))
    except ValueError as exc:
        raise ConfigError(f"feasibility: {exc}") from exc
    run.add_json("feasibility", rep.to_dict())
    if run.args.format == "csv":
        rows = [{"quantity": k, "value": getattr(rep, k)}
                for k in ("memory_qubits", "computing_qubits", "resolvable_lines", "connectivity_degree", "cluster_count")]
        run.add_csv("feasibility", lambda fh: _write_rows(fh, rows, ["quantity", "value"]))
    run.results.update({"memory_qubits": rep.memory_qubits, "computing_qubits": rep.computing_qubits})
    sys.stdout.write(feas.format_table(rep))


def cmd_oracle(run: Run) -> None:
    o = run.cfg.get("oracle", {})
    n_max = int(run.args.max_clusters or o.get("max_clusters", 6))
    inputs = o.get("inputs", [[0.6, 0.8], [0.8, 0.6]])
    if len(inputs) != 2 or any(len(v) != 2 for v in inputs):
        raise ConfigError("oracle.inputs: give two qubits (c_vacuum, c_photon)")
    cluster = ph.default_mode_cluster(2)
    gate = cnot_on(cluster, 0, 1)
    modes = {"A": inputs[0], "B": inputs[1]}
    try:
        mode_state = ph.apply_sequence_stored(ph.store(modes), gate, cluster)
        U = sequence_unitary(ClusterModel(cluster, DriveModel.ideal()), gate.pulses)
        rows = []
        for N in range(1, n_max + 1):
            dev = ph.oracle_deviation(mode_state, ph.exact_oracle(N, modes, [U], max_clusters=n_max))
            rows.append({"n_clusters": N, "infidelity": dev, "n_times_infidelity": N * dev})
    except ValueError as exc:
        raise ConfigError(f"oracle: {exc}") from exc
    run.add("oracle", rows, ["n_clusters", "infidelity", "n_times_infidelity"])
    run.results.update({"max_clusters": n_max})
    for r in rows:
        print(f"N={r['n_clusters']}: infidelity {r['infidelity']:.6f}")


COMMANDS = {
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "photonic": cmd_photonic,
    "qec": cmd_qec,
    "feasibility": cmd_feasibility,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML scenario file")
    common.add_argument("--seed", type=int, default=None, help="root random seed (overrides the config)")
    common.add_argument("--out-dir", default="spincluster-out", help="directory for results and manifest")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="format of tabular outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="spincluster", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"spincluster {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run one compiled gate and print its truth table")
    p.add_argument("gate", nargs="?", choices=GATES)
    p.add_argument("--ideal", action="store_true", help="drive only the addressed transition")
    p.add_argument("--rabi", type=float, help="Rabi frequency in MHz")
    p.add_argument("--omegas", type=float, nargs="+", help="also sweep fidelity over these Rabi frequencies")

    sub.add_parser("ensemble", parents=[common], help="prepare, distill and read out an ensemble")
    sub.add_parser("photonic", parents=[common], help="store photons, run a mode circuit, recall")
    p = sub.add_parser("qec", parents=[common], help="repetition-code runs against dephasing correlation")
    p.add_argument("--protocol", choices=("bitflip3", "phaseflip3"))
    sub.add_parser("feasibility", parents=[common], help="closed-form material estimates")
    p = sub.add_parser("oracle", parents=[common], help="finite-N check of the stored-mode CNOT")
    p.add_argument("--max-clusters", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        run = Run(args, cfg)
        COMMANDS[args.command](run)
        out = run.write()
    except ConfigError as exc:
        print(f"spincluster: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"spincluster: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    log.info("wrote %s", out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
