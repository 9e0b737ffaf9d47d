import json

import pytest
import yaml

from sphkam.cli import EXIT_OK, EXIT_STAGE, EXIT_USAGE, main
from sphkam.config import golden_config_path, load_golden, parse_config
from sphkam.kam import ConfigError
from sphkam.operators import load_operator


def _small(tmp_path, **physics):
    data = golden_config_path().parent
    raw = {
        "schema_version": 1,
        "seed": 2,
        "physics": {"K_max": 4, "L_max": 2, "epsilon": 1e-3, "tau": 20.0, **physics},
        "potentials": {"V": str(data / "golden_V.txt"), "W": str(data / "golden_W.txt")},
        "omega": [[0.7548776662466927, 1.324717957244746]],
        "measure": {"K": [2], "N_samples": 500},
        "evolve": {"T": 1.0, "n_out": 11},
    }
    return raw


def _write(tmp_path, raw, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return str(path)


def test_no_arguments_prints_usage(capsys):
    assert main([]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().out


def test_golden_config_loads():
    cfg = load_golden()
    assert cfg.kam.K_max == 8 and cfg.kam.epsilon == 1e-3
    assert cfg.V.is_real() and cfg.W.is_real()
    assert all(k % 2 == 1 for _, k, _ in cfg.V.coefficients)


def test_tau_below_bound_is_a_usage_error(tmp_path, capsys):
    raw = _small(tmp_path, tau=5.0)
    assert main(["reduce", _write(tmp_path, raw), "-o", str(tmp_path / "out")]) == EXIT_USAGE
    assert "tau" in capsys.readouterr().err


@pytest.mark.parametrize("mutate, field", [
    (lambda r: r.update(extra=1), "extra"),
    (lambda r: r["physics"].update(K=3), "physics.K"),
    (lambda r: r.update(omega=[[0.2, 1.0]]), "omega"),
    (lambda r: r.update(omega=[[1.0]]), "omega"),
    (lambda r: r["evolve"].update(dt=0.1), "evolve.dt"),
    (lambda r: r["potentials"].update(V="missing.txt"), "potentials.V"),
])
def test_bad_configs_name_the_field(tmp_path, mutate, field):
    raw = _small(tmp_path)
    mutate(raw)
    with pytest.raises(ConfigError) as info:
        parse_config(raw, tmp_path)
    assert info.value.field == field


def test_assemble_writes_loadable_operators(tmp_path):
    out = tmp_path / "out"
    assert main(["assemble", _write(tmp_path, _small(tmp_path)), "-o", str(out)]) == EXIT_OK
    V = load_operator(out / "V.op")
    assert V.K_max == 4 and V.d == 2
    doc = json.loads((out / "assemble.json").read_text())
    assert doc["hermitian_defect"] < 1e-12


def test_reduce_writes_reports_and_is_deterministic(tmp_path, capsys):
    cfg = _write(tmp_path, _small(tmp_path))
    assert main(["reduce", cfg, "-o", str(tmp_path / "a"), "--dump"]) == EXIT_OK
    assert main(["reduce", cfg, "-o", str(tmp_path / "b")]) == EXIT_OK
    docs = []
    for d in ("a", "b"):
        doc = json.loads((tmp_path / d / "report.json").read_text())
        doc.pop("generated_at")
        docs.append(doc)
    assert docs[0] == docs[1]
    run = docs[0]["runs"][0]
    assert run["status"] == "converged" and run["passed"]
    assert (tmp_path / "a" / "Z_0.op").exists()
    header = (tmp_path / "a" / "steps_0.csv").read_text().splitlines()[0]
    assert header.startswith("step,K,sigma")
    assert "PASS" in capsys.readouterr().out


def test_zero_potentials_reduce_trivially(tmp_path):
    raw = _small(tmp_path)
    raw.pop("potentials")
    out = tmp_path / "out"
    assert main(["reduce", _write(tmp_path, raw), "-o", str(out)]) == EXIT_OK
    run = json.loads((out / "report.json").read_text())["runs"][0]
    assert run["status"] == "converged"
    assert run["history"]["steps"] == []


def test_oversized_perturbation_is_a_stage_error(tmp_path, capsys):
    raw = _small(tmp_path, epsilon=50.0)
    assert main(["reduce", _write(tmp_path, raw), "-o", str(tmp_path / "out")]) == EXIT_STAGE
    assert "[stage reduce]" in capsys.readouterr().err


def test_measure_and_report(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["measure", _write(tmp_path, _small(tmp_path)), "-o", str(out)]) == EXIT_OK
    assert (out / "measure_K2.csv").exists()
    doc = json.loads((out / "measure.json").read_text())
    assert doc["reports"][0]["sampled_count"] == 500
    capsys.readouterr()
    assert main(["report", str(out / "measure.json")]) == EXIT_OK
    assert "fraction" in capsys.readouterr().out


def test_evolve_reports_conjugacy(tmp_path):
    out = tmp_path / "out"
    assert main(["evolve", _write(tmp_path, _small(tmp_path)), "-o", str(out)]) == EXIT_OK
    run = json.loads((out / "evolve.json").read_text())["runs"][0]
    assert run["conjugacy_defect"] < 1e-6
    assert run["norm_band_ok"]
    assert (out / "evolve_original_0.csv").exists()


@pytest.mark.slow
def test_selfcheck_catches_the_mutant(capsys):
    assert main(["selfcheck", "--seed", "0"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "PASS  mutation: sign-flipped regularizer is detected" in out
