import numpy as np
import pytest

from peda.cli import main
from peda.config import (
    ConfigError,
    config_hash,
    default_config,
    emit_config,
    parse_config,
)
from peda.grid import read_state


SMALL_TWIN = """
[grid]
nx = 12
ny = 12
nz = 5

[phys]
nu = 0.02
beta = 0.2
gamma = 0.2

[model]
dt = 0.05
tau0 = 0.2

[floats]
count = 6
obs_count = 4
noise_sd = 0.001

[assim]
omega = 0.1
outer = 2
inner = 4
sigma_mode = const

[twin]
spinup_steps = 60
window_steps = 24

[run]
seed = 7
plots = false
"""


class TestParseConfig:
    def test_empty_gives_defaults(self):
        rc = parse_config("")
        assert rc.grid_nx == 32
        assert rc.phys_nu == 0.02
        assert rc.assim_omega == 1.0

    def test_unknown_key_named_with_line(self):
        with pytest.raises(ConfigError, match="line 3.*bogus"):
            parse_config("[grid]\nnx = 8\nbogus = 1\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown section"):
            parse_config("[nope]\nx = 1\n")

    def test_type_mismatch(self):
        with pytest.raises(ConfigError, match="nx.*int"):
            parse_config("[grid]\nnx = three\n")

    def test_invariant_violation_names_key(self):
        with pytest.raises(ConfigError, match="nu.*positive"):
            parse_config("[phys]\nnu = -1\n")

    def test_key_before_section(self):
        with pytest.raises(ConfigError, match="before any"):
            parse_config("nx = 8\n")

    def test_comments_and_blanks(self):
        rc = parse_config("# a comment\n\n[grid]\nnx = 16  # inline\n")
        assert rc.grid_nx == 16

    def test_round_trip(self):
        rc = parse_config(SMALL_TWIN)
        text = emit_config(rc)
        rc2 = parse_config(text)
        assert rc == rc2
        assert emit_config(rc2) == text

    def test_hash_stable_and_sensitive(self):
        a = parse_config(SMALL_TWIN)
        b = parse_config(SMALL_TWIN)
        assert config_hash(a) == config_hash(b)
        c = parse_config(SMALL_TWIN + "\n[run]\nseed = 8\n")
        assert config_hash(a) != config_hash(c)

    def test_cross_validation_z0(self):
        with pytest.raises(ConfigError, match="z0"):
            parse_config("[grid]\na = 0.5\n[floats]\nz0 = 0.7\n")

    def test_norm_K_auto_resolution(self):
        rc = parse_config("[phys]\nnu = 0.1\nbeta = 0.5\ngamma = 0.5\n")
        p = rc.norm_params()
        assert p.K == pytest.approx(800.0)

    def test_factories(self):
        rc = parse_config(SMALL_TWIN)
        assert rc.grid().shape == (12, 12, 5)
        assert rc.model_config().dt == 0.05
        tc = rc.twin_config()
        assert tc.floats == 6 and tc.window_steps == 24


def run_cli(args, tmp_path, config_text=None):
    argv = list(args) + ["--out", str(tmp_path / "runs")]
    if config_text is not None:
        cfgfile = tmp_path / "run.cfg"
        cfgfile.write_text(config_text)
        argv += ["--config", str(cfgfile)]
    return main(argv)


def only_run_dir(tmp_path):
    dirs = sorted((tmp_path / "runs").iterdir(), key=lambda p: p.stat().st_mtime_ns)
    assert dirs
    return dirs[-1]


class TestCliSubcommands:
    def test_unknown_subcommand_exits_nonzero(self, capsys):
        with pytest.raises(SystemExit) as ex:
            main(["frobnicate"])
        assert ex.value.code != 0

    def test_missing_config_file(self, tmp_path, capsys):
        rcode = main(["twin", "--config", str(tmp_path / "none.cfg")])
        assert rcode == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_config_key_is_reported(self, tmp_path, capsys):
        rcode = run_cli(["twin"], tmp_path, "[phys]\nnu = -2\n")
        assert rcode == 1
        err = capsys.readouterr().err
        assert "error:" in err and "nu" in err

    def test_spinup_outputs(self, tmp_path):
        assert run_cli(["spinup"], tmp_path, SMALL_TWIN) == 0
        rd = only_run_dir(tmp_path)
        assert (rd / "resolved.cfg").exists()
        assert (rd / "diagnostics.csv").exists()
        X = read_state(rd, "spinup")
        assert X.grid.shape == (12, 12, 5)

    def test_obs_outputs(self, tmp_path):
        assert run_cli(["obs"], tmp_path, SMALL_TWIN) == 0
        rd = only_run_dir(tmp_path)
        lines = (rd / "obs.csv").read_text().splitlines()
        assert lines[0] == "float_id,time_index,x,y,noise_sd"
        assert len(lines) == 1 + 6 * 4

    def test_truth_and_evaluate(self, tmp_path):
        assert run_cli(["truth"], tmp_path, SMALL_TWIN + "\n[run]\nrecord_every = 6\n") == 0
        rd = only_run_dir(tmp_path)
        truth_dir = rd / "truth"
        assert (truth_dir / "state_000000_u.peda").exists()
        assert (truth_dir / "state_000024_theta.peda").exists()
        eval_cfg = (SMALL_TWIN
                    + f"\n[paths]\nrun_dir = {truth_dir}\nref_dir = {truth_dir}\n")
        assert run_cli(["evaluate"], tmp_path, eval_cfg) == 0
        rd2 = only_run_dir(tmp_path)
        lines = (rd2 / "errors.csv").read_text().splitlines()
        assert lines[0] == "time,E_u,E_v"
        vals = [float(x) for x in lines[1].split(",")]
        assert vals[1] == 0.0 and vals[2] == 0.0

    def test_evaluate_grid_mismatch(self, tmp_path, capsys):
        assert run_cli(["truth"], tmp_path, SMALL_TWIN) == 0
        truth_a = only_run_dir(tmp_path) / "truth"
        other = SMALL_TWIN.replace("nx = 12", "nx = 16")
        assert run_cli(["truth"], tmp_path, other) == 0
        truth_b = only_run_dir(tmp_path) / "truth"
        eval_cfg = (SMALL_TWIN
                    + f"\n[paths]\nrun_dir = {truth_a}\nref_dir = {truth_b}\n")
        rcode = run_cli(["evaluate"], tmp_path, eval_cfg)
        assert rcode == 1
        assert "error:" in capsys.readouterr().err

    def test_gradcheck_csv(self, tmp_path):
        cfg = SMALL_TWIN + "\n[gradcheck]\ndirections = 3\n"
        assert run_cli(["gradcheck"], tmp_path, cfg) == 0
        rd = only_run_dir(tmp_path)
        lines = (rd / "gradcheck.csv").read_text().splitlines()
        assert lines[0] == "direction,analytic,fd,rel_error"
        assert len(lines) == 4
        for row in lines[1:]:
            assert float(row.split(",")[3]) <= 1e-5

    def test_verify_subchecks(self, tmp_path):
        cfg = """
[grid]
nx = 12
ny = 12
nz = 5
[phys]
nu = 0.1
beta = 0.1
gamma = 0.1
[model]
dt = 0.01
[verify]
samples = 2
t_final = 0.05
picard_t = 0.1
[run]
plots = false
"""
        assert run_cli(["verify", "wbound"], tmp_path, cfg) == 0
        rd = only_run_dir(tmp_path)
        assert (rd / "wbound.csv").exists()
        header = (rd / "wbound.csv").read_text().splitlines()[0]
        assert header == "sample,lhs,rhs,margin,pass"
        assert run_cli(["verify", "energy"], tmp_path, cfg) == 0
        rd = only_run_dir(tmp_path)
        assert (rd / "energy.csv").read_text().splitlines()[0] \
            == "sample,time,lhs,rhs,margin"
        assert run_cli(["verify", "picard"], tmp_path, cfg) == 0
        rd = only_run_dir(tmp_path)
        assert (rd / "picard.csv").exists()

    def test_twin_end_to_end(self, tmp_path):
        assert run_cli(["twin"], tmp_path, SMALL_TWIN) == 0
        rd = only_run_dir(tmp_path)
        for name in ("obs.csv", "errors.csv", "minlog.csv",
                     "diagnostics_truth.csv", "diagnostics_background.csv",
                     "diagnostics_analysis.csv", "resolved.cfg"):
            assert (rd / name).exists(), name
        assert (rd / "analysis_u.peda").exists()
        lines = (rd / "errors.csv").read_text().splitlines()
        assert lines[0] == "time,E_u_bg,E_v_bg,E_u_an,E_v_an"

    def test_twin_with_plots(self, tmp_path):
        cfg = SMALL_TWIN.replace("plots = false", "plots = true")
        assert run_cli(["twin"], tmp_path, cfg) == 0
        rd = only_run_dir(tmp_path)
        for name in ("fig_minimization.png", "fig_errors.png",
                     "fig_surface_speed.png"):
            assert (rd / name).exists(), name

    def test_seed_override_changes_hash(self, tmp_path):
        assert run_cli(["obs", "--seed", "99"], tmp_path, SMALL_TWIN) == 0
        rd = only_run_dir(tmp_path)
        assert "seed = 99" in (rd / "resolved.cfg").read_text()
