"""CLI dispatch, exit codes, determinism."""

import json

import numpy as np
import pytest

from lowmach.cli import main


def write_toml(path, text):
    path.write_text(text)
    return str(path)


def run_cli(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "schema" in out and "snapshot" in out


def test_wavecone_example(tmp_path, capsys):
    cfg = write_toml(
        tmp_path / "cfg.toml",
        """
[wavecone]
u1 = [1.0, 0.0]
P1 = 1.0
u2 = [0.0, 0.0]
P2 = 0.0
""",
    )
    code, out, err = run_cli(
        ["wavecone", "--config", cfg, "--output-dir", str(tmp_path)], capsys
    )
    assert code == 0
    assert "det = -1" in out
    assert "member = False" in out
    doc = json.loads((tmp_path / "wavecone.json").read_text())
    assert doc["det"] == -1.0
    assert doc["membership"]["member"] is False


def test_malformed_config_exit_2(tmp_path, capsys):
    cfg = write_toml(tmp_path / "bad.toml", "[wavecone]\nu1 = [1.0, 0.0]\n")
    code, out, err = run_cli(
        ["wavecone", "--config", cfg, "--output-dir", str(tmp_path)], capsys
    )
    assert code == 2
    record = json.loads(err)
    assert record["error"]["kind"] == "validation"
    assert "wavecone.u2" in record["error"]["field"]


def test_missing_table_exit_2(tmp_path, capsys):
    cfg = write_toml(tmp_path / "bad.toml", "[simulate]\nn = 16\n")
    code, _, err = run_cli(
        ["jensen", "--config", cfg, "--output-dir", str(tmp_path)], capsys
    )
    assert code == 2
    assert json.loads(err)["error"]["field"] == "jensen"


def test_unparsable_toml_exit_2(tmp_path, capsys):
    cfg = write_toml(tmp_path / "bad.toml", "this is not toml ][")
    code, _, err = run_cli(
        ["wavecone", "--config", cfg, "--output-dir", str(tmp_path)], capsys
    )
    assert code == 2
    assert json.loads(err)["error"]["kind"] == "validation"


def test_dry_run_validates_without_computing(tmp_path, capsys):
    cfg = write_toml(
        tmp_path / "sim.toml",
        """
[simulate]
n = 16
eps = 0.5
T = 0.05
""",
    )
    code, out, _ = run_cli(
        ["simulate", "--config", cfg, "--output-dir", str(tmp_path), "--dry-run"],
        capsys,
    )
    assert code == 0
    assert json.loads(out)["action"] == "simulate"
    assert not list(tmp_path.glob("*.bin"))


def test_simulate_writes_artifacts(tmp_path, capsys):
    cfg = write_toml(
        tmp_path / "sim.toml",
        """
[simulate]
n = 16
eps = 0.5
T = 0.05
snapshot_times = [0.0, 0.05]
init = "shear"
""",
    )
    code, out, _ = run_cli(
        ["simulate", "--config", cfg, "--output-dir", str(tmp_path)], capsys
    )
    assert code == 0
    assert (tmp_path / "snap_0000.bin").exists()
    assert (tmp_path / "snap_0001.bin").exists()
    energy = json.loads((tmp_path / "energy.json").read_text())
    assert energy["times"][0] == 0.0


def test_jensen_diatomic_violated_exit_4(tmp_path, capsys):
    cfg = write_toml(
        tmp_path / "jensen.toml",
        """
[jensen]
assert_not_violated = true
[jensen.diatomic]
u1 = [1.0, 0.0]
P1 = 1.0
u2 = [0.0, 0.0]
P2 = 0.0
""",
    )
    code, out, err = run_cli(
        ["jensen", "--config", cfg, "--output-dir", str(tmp_path)], capsys
    )
    assert code == 4
    assert json.loads(err)["error"]["kind"] == "check_failed"
    doc = json.loads((tmp_path / "jensen.json").read_text())
    assert doc["violated_fraction"] == 1.0


def test_jensen_diatomic_connected_exit_0(tmp_path, capsys):
    cfg = write_toml(
        tmp_path / "jensen.toml",
        """
[jensen]
assert_not_violated = true
[jensen.diatomic]
u1 = [1.0, 0.0]
P1 = 0.5
u2 = [0.0, 1.0]
P2 = 0.5
""",
    )
    code, out, _ = run_cli(
        ["jensen", "--config", cfg, "--output-dir", str(tmp_path)], capsys
    )
    assert code == 0
    assert json.loads(out)["violated"] == 0


def test_envelope_json_config_and_determinism(tmp_path, capsys):
    cfg_path = tmp_path / "env.json"
    cfg_path.write_text(
        json.dumps(
            {
                "envelope": {
                    "state": [0.0, 0.1, 0.0, 0.0, 0.0, 0.2],
                    "function": "det_derived",
                    "q": 1.0,
                    "trials": 2,
                }
            }
        )
    )
    outs = []
    for run_dir in ("a", "b"):
        out_dir = tmp_path / run_dir
        code, _, _ = run_cli(
            ["envelope", "--config", str(cfg_path), "--output-dir", str(out_dir), "--seed", "7"],
            capsys,
        )
        assert code == 0
        outs.append((out_dir / "envelope.json").read_bytes())
    assert outs[0] == outs[1]  # same seed + config -> byte-identical report


def test_envelope_unknown_function(tmp_path, capsys):
    cfg = write_toml(
        tmp_path / "env.toml",
        """
[envelope]
state = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
function = "nope"
""",
    )
    code, _, err = run_cli(
        ["envelope", "--config", cfg, "--output-dir", str(tmp_path)], capsys
    )
    assert code == 2


def test_residual_operator_kernel_wave(tmp_path, capsys):
    cfg = write_toml(
        tmp_path / "res.toml",
        """
[residual]
kind = "operator"
freq = [1, 2, 0]
basis_index = 0
""",
    )
    code, out, _ = run_cli(
        ["residual", "--config", cfg, "--output-dir", str(tmp_path)], capsys
    )
    assert code == 0
    doc = json.loads((tmp_path / "residual.json").read_text())
    assert doc["residual"] <= 1e-10


def test_residual_weak_small_run(tmp_path, capsys):
    cfg = write_toml(
        tmp_path / "res.toml",
        """
[residual]
kind = "weak"
n = 16
eps = 0.5
T = 0.1
n_snapshots = 17
k_max = 1
""",
    )
    code, out, _ = run_cli(
        ["residual", "--config", cfg, "--output-dir", str(tmp_path)], capsys
    )
    assert code == 0
    assert json.loads(out)["residual"] > 0


def test_relative_energy_subcommand(tmp_path, capsys):
    cfg = write_toml(
        tmp_path / "rel.toml",
        """
[relative_energy]
n = 16
eps = 0.1
T = 0.1
n_snapshots = 5
assert_bound = true
""",
    )
    code, out, _ = run_cli(
        ["relative-energy", "--config", cfg, "--output-dir", str(tmp_path)], capsys
    )
    assert code == 0
    assert json.loads(out)["passed"] is True


def test_ladder_dry_run_and_small_run(tmp_path, capsys):
    cfg = write_toml(
        tmp_path / "ladder.toml",
        """
[ladder]
eps_list = [0.1, 0.03, 0.01]
n = 16
T = 0.1
n_snapshots = 9
coarsen = 8
coarsen_t = 4
with_jensen = false
""",
    )
    code, out, _ = run_cli(
        ["ladder", "--config", cfg, "--output-dir", str(tmp_path), "--dry-run"], capsys
    )
    assert code == 0
    assert json.loads(out)["action"] == "ladder"
    code, out, _ = run_cli(
        ["ladder", "--config", cfg, "--output-dir", str(tmp_path)], capsys
    )
    assert code == 0
    assert (tmp_path / "report.json").exists()
    assert (tmp_path / "per_eps.csv").exists()
    summary = json.loads(out)
    assert summary["concentration_slope"] > 0.4


def test_missing_config_file(tmp_path, capsys):
    code, _, err = run_cli(
        ["simulate", "--config", str(tmp_path / "nope.toml"), "--output-dir", str(tmp_path)],
        capsys,
    )
    assert code == 2
