import json
from pathlib import Path

import pytest

from spincluster import cli
from spincluster.config import ConfigError, config_hash, load_config, parse_config, validate
from spincluster.pulsesim import NumericalFailure

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


# ---------------------------------------------------------------- schema

def test_unknown_key_names_dotted_path():
    with pytest.raises(ConfigError, match=r"material\.dopingfraction: unknown key"):
        parse_config("[material]\ndopingfraction = 1e-3\n")


def test_bool_is_not_a_number():
    with pytest.raises(ConfigError, match="got bool"):
        validate({"material": {"doping_fraction": True}})


def test_bool_accepted_where_declared():
    assert validate({"drive": {"ideal": True}}) == {"drive": {"ideal": True}}


def test_type_errors_in_lists():
    with pytest.raises(ConfigError, match=r"qec\.correlations\[1\]"):
        validate({"qec": {"correlations": [0.0, "half"]}})


def test_nonfinite_only_allowed_for_noise():
    assert validate({"noise": {"spin_T2": float("inf")}})
    with pytest.raises(ConfigError, match="finite"):
        validate({"simulate": {"rabi": float("nan")}})


def test_every_error_reported_at_once():
    with pytest.raises(ConfigError) as info:
        validate({"a": 1, "b": 2})
    assert "a: unknown key" in str(info.value) and "b: unknown key" in str(info.value)


def test_toml_syntax_error():
    with pytest.raises(ConfigError, match="cannot parse"):
        parse_config("[material\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.toml")
    assert load_config(None) == {}


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.name)
def test_shipped_configs_validate(path):
    assert isinstance(load_config(path), dict)


def test_config_hash_ignores_key_order():
    a = {"seed": 1, "qec": {"rate": 0.1, "cycles": 2}}
    b = {"qec": {"cycles": 2, "rate": 0.1}, "seed": 1}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "seed": 2})
    assert len(config_hash(a)) == 64


# ---------------------------------------------------------------- command line

def _run(argv, tmp_path, name="out"):
    out = tmp_path / name
    code = cli.main([*argv, "--out-dir", str(out)])
    return code, out


def test_bad_config_exits_with_code_2(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[qec]\nratee = 0.1\n")
    code, _ = _run(["qec", "--config", str(cfg)], tmp_path)
    assert code == 2
    assert "qec.ratee: unknown key" in capsys.readouterr().err


def test_simulate_ideal_cnot(tmp_path, capsys):
    code, out = _run(["simulate", "cnot", "--ideal"], tmp_path)
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["results"]["fidelity"] > 0.999
    assert "average fidelity" in capsys.readouterr().out
    lines = (out / "simulate_cnot.csv").read_text().splitlines()
    assert lines[0].startswith("# spincluster ")
    assert lines[1] == "input,output,probability"
    # control and target both set: the target flips
    row = next(l for l in lines[2:] if l.startswith("11,10,"))
    assert float(row.split(",")[2]) > 0.999


def test_simulate_uncompilable_gate_is_a_config_error(tmp_path):
    cfg = tmp_path / "weak.toml"
    cfg.write_text("[cluster]\nshifts = [0.0, 300.0]\ninteractions = [[0, 1, 0.0]]\n")
    code, _ = _run(["simulate", "cnot", "--config", str(cfg)], tmp_path)
    assert code == 2


def test_feasibility_from_config(tmp_path, capsys):
    code, out = _run(["feasibility", "--config", str(CONFIGS / "euCl3.toml")], tmp_path)
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["results"]["memory_qubits"] == 3
    doc = json.loads((out / "feasibility.json").read_text())
    assert doc["data"]["resolvable_lines"] == 134
    assert doc["meta"]["config_sha256"] == manifest["config_sha256"]
    assert "memory qubits" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["qec", "--seed", "5"],
    ["feasibility", "--config", str(CONFIGS / "euCl3.toml")],
    ["ensemble", "--config", str(CONFIGS / "ensemble.toml"), "--format", "json"],
])
def test_reruns_are_byte_identical(argv, tmp_path):
    code_a, a = _run(argv, tmp_path, "a")
    code_b, b = _run(argv, tmp_path, "b")
    assert code_a == code_b == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_seed_changes_the_hash(tmp_path):
    _, a = _run(["qec", "--seed", "1"], tmp_path, "a")
    _, b = _run(["qec", "--seed", "2"], tmp_path, "b")
    ha = json.loads((a / "manifest.json").read_text())["config_sha256"]
    hb = json.loads((b / "manifest.json").read_text())["config_sha256"]
    assert ha != hb


def test_numerical_failure_exits_with_code_3(tmp_path, monkeypatch, capsys):
    def boom(run):
        raise NumericalFailure("state left the physical set")

    monkeypatch.setitem(cli.COMMANDS, "feasibility", boom)
    code, out = _run(["feasibility"], tmp_path)
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err
    assert not out.exists()


def test_oracle_command(tmp_path):
    code, out = _run(["oracle", "--max-clusters", "3"], tmp_path)
    assert code == 0
    rows = (out / "oracle.csv").read_text().splitlines()[2:]
    devs = [float(r.split(",")[1]) for r in rows]
    assert len(devs) == 3
    assert all(b <= a + 1e-12 for a, b in zip(devs, devs[1:]))


def test_photonic_command(tmp_path):
    code, out = _run(["photonic", "--config", str(CONFIGS / "photonic.toml")], tmp_path)
    assert code == 0
    norm = json.loads((out / "manifest.json").read_text())["results"]["norm"]
    assert norm == pytest.approx(1.0, abs=1e-9)
