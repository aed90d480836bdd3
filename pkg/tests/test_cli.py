"""Command line, persistence, and determinism contracts."""

import json
from pathlib import Path

import pytest

from rwre import cli
from rwre.errors import ConfigurationError
from rwre.reporting import config_hash, sha256_file

TINY = {
    "simulate": {"model": "iid-dirichlet-balanced", "d": 2, "kappa": 0.1,
                 "walkers": 200, "steps": 500},
    "phi": {"model": "srw", "d": 2, "N_values": [2, 4], "n_seeds": 1},
    "diffusivity": {"model": "iid-dirichlet-balanced", "d": 2, "kappa": 0.1,
                    "N": 4, "n_seeds": 3},
    "einstein": {"model": "srw", "d": 2, "lams": [0.2, 0.1], "ts": [1.0],
                 "walkers": 500, "N": 3, "n_seeds": 2},
    "harnack": {"model": "iid-dirichlet-balanced", "d": 2, "kappa": 0.1,
                "R_values": [5, 6], "n_instances": 4},
    "maxprinciple": {"model": "iid-dirichlet-balanced", "d": 2, "kappa": 0.1,
                     "radius": 4, "n_instances": 6},
    "percolation": {"model": "iid-trap-mixture", "d": 2, "kappa": 0.05,
                    "trap_p": 0.1, "trap_floor": 0.01, "xi0": 0.25,
                    "eps0": 0.02, "n_values": [1, 2], "trials": 500,
                    "cluster_windows": 1, "cluster_radius": 6},
    "regen": {"model": "iid-dirichlet-balanced", "d": 2, "kappa": 0.1,
              "lam": 0.1, "walkers": 2, "regens_per_walker": 1,
              "horizon": 40000, "c1_sites": 1, "min_regens": 1},
    "hitting": {"model": "srw", "d": 2, "lam": 0.1, "ell1": 1.0, "n": 1,
                "m": 1, "walkers": 4000},
}


def _run(exp, out, seed=7, workers=1, extra=None):
    cfg = dict(TINY[exp])
    cfg["experiment"] = exp
    cfg["seed"] = seed
    cfg["workers"] = workers
    if extra:
        cfg.update(extra)
    return cli.run(cfg, Path(out) / exp)


def _data_files(root):
    out = {}
    for p in sorted(Path(root).rglob("*")):
        if p.is_file() and p.suffix in (".csv", ".json", ".npz") \
                and p.name != "manifest.json":
            out[str(p.relative_to(root))] = sha256_file(p)
    return out


@pytest.mark.parametrize("exp", sorted(TINY))
def test_each_experiment_runs(tmp_path, exp):
    manifest = _run(exp, tmp_path)
    assert manifest.status == "complete"
    out = tmp_path / exp
    assert (out / f"{exp}.csv").exists()
    assert (out / "report.json").exists()
    # manifest checksums match emitted files
    for name, digest in manifest.outputs.items():
        assert sha256_file(out / name) == digest
    # at least one figure rendered alongside the delimited output
    figs = list((out / "figures").glob("*.png"))
    assert figs, "report path must render figures"
    # every data row carries (config hash, seed) lineage
    header = (out / f"{exp}.csv").read_text().splitlines()[0]
    assert "config_hash" in header and "seed" in header


def test_same_config_byte_identical(tmp_path):
    _run("phi", tmp_path / "a")
    _run("phi", tmp_path / "b")
    assert _data_files(tmp_path / "a") == _data_files(tmp_path / "b")


@pytest.mark.parametrize("exp", ["maxprinciple", "phi", "regen"])
def test_worker_count_invariance(tmp_path, exp):
    _run(exp, tmp_path / "w1", workers=1)
    _run(exp, tmp_path / "w2", workers=2)
    assert _data_files(tmp_path / "w1") == _data_files(tmp_path / "w2")


def test_seed_changes_output(tmp_path):
    _run("simulate", tmp_path / "a", seed=1)
    _run("simulate", tmp_path / "b", seed=2)
    assert _data_files(tmp_path / "a") != _data_files(tmp_path / "b")


def test_validate_flags_bad_kappa():
    diags = cli.validate({"experiment": "phi", "model":
                          "iid-dirichlet-balanced", "d": 2, "kappa": 0.3})
    assert any("1/(2d)" in d for d in diags)


def test_validate_flags_beta_above_c1():
    diags = cli.validate({"experiment": "regen", "model": "srw", "d": 2,
                          "beta": 0.9, "c1_estimate": 0.2, "lam": 0.1})
    assert any("beta" in d for d in diags)


def test_validate_clean_config():
    assert cli.validate({"experiment": "phi", "model": "srw", "d": 2}) == []


def test_run_rejects_invalid_config(tmp_path):
    cfg = {"experiment": "phi", "model": "iid-dirichlet-balanced", "d": 2,
           "kappa": 0.4}
    with pytest.raises(ConfigurationError):
        cli.run(cfg, tmp_path / "x")


def test_cli_main_and_env_override(tmp_path, monkeypatch):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(TINY["phi"]))
    monkeypatch.setenv("RWRE_SEED", "99")
    rc = cli.main(["phi", "--config", str(cfg_path), "--out",
                   str(tmp_path / "out")])
    assert rc == 0
    report = json.loads((tmp_path / "out" / "phi" / "report.json").read_text())
    assert report["seed"] == 99


def test_cli_validate_subcommand(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"experiment": "phi", "model": "srw",
                                    "d": 2}))
    rc = cli.main(["validate", "--config", str(cfg_path)])
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["diagnostics"] == []


def test_cli_error_exit_code(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"model": "iid-dirichlet-balanced",
                                    "d": 2, "kappa": 0.9}))
    rc = cli.main(["phi", "--config", str(cfg_path), "--out",
                   str(tmp_path / "out")])
    assert rc == 2
    err = capsys.readouterr().err
    assert "error" in err


def test_hitting_csv_reference_value(tmp_path):
    _run("hitting", tmp_path)
    text = (tmp_path / "hitting" / "hitting.csv").read_text().splitlines()
    header = text[0].split(",")
    row = text[1].split(",")
    exact = float(row[header.index("exact")])
    mc = float(row[header.index("mc")])
    ci = float(row[header.index("mc_ci3")])
    assert exact == pytest.approx(0.88150, abs=5e-5)
    assert abs(mc - exact) <= ci


def test_config_hash_stable():
    a = config_hash({"b": 1, "a": [1, 2]})
    b = config_hash({"a": [1, 2], "b": 1})
    assert a == b and len(a) == 16
