import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from kgflow.cli import main
from kgflow.config import parse_config
from kgflow.errors import ConfigError, UnsupportedDimensionError
from kgflow.experiments import run_experiment
from kgflow.family import GaussianVariationalParams
from kgflow.io import emit_trajectory, read_trajectory_csv
from kgflow.metrics import FlowTrajectory
from kgflow.plotting import emit_plot
from kgflow.svgd import ParticleEnsemble
from kgflow.targets import make_gaussian

SVG_NS = "{http://www.w3.org/2000/svg}"

CONJUGATE_SVGD = """
subcommand = "svgd"
seed = 3
[target]
family = "conjugate"
observation = [1.0]
[flow]
step_size = 0.05
num_steps = 40
num_particles = 30
record_every = 10
"""

GAUSSIAN_COMPARE = """
subcommand = "compare"
[target]
family = "gaussian"
mean = [0.5, -0.5]
covariance = [[1.0, 0.3], [0.3, 0.8]]
[flow]
step_size = 0.02
num_steps = 1500
num_particles = 300
record_every = 500
[init]
mu = [-0.5, 0.5]
a_matrix = [[0.7, 0.0], [0.0, 0.7]]
"""

DIVERGENT_SVGD = """
subcommand = "svgd"
[target]
family = "gaussian"
mean = [0.0]
covariance = [[1e-6]]
[flow]
step_size = 10.0
num_steps = 50
num_particles = 10
record_every = 1
"""


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def count_panels(svg_path):
    # one axes group per panel; matplotlib tags them with id="axes_N"
    root = ET.parse(svg_path).getroot()
    return sum(1 for g in root.iter(f"{SVG_NS}g") if g.get("id", "").startswith("axes_"))


class TestParseConfig:
    def test_defaults(self):
        cfg = parse_config('[target]\nfamily = "gaussian"\nmean = [0.0]\ncovariance = [[1.0]]\n', subcommand="svgd")
        assert cfg.flow.step_size == 0.05
        assert cfg.flow.num_particles == 200
        assert cfg.flow.num_steps == 2000
        assert cfg.seed == 0
        assert cfg.kernel == "rbf"

    def test_compare_defaults_to_ntk(self):
        cfg = parse_config('[target]\nfamily = "conjugate"\nobservation = [1.0]\n', subcommand="compare")
        assert cfg.kernel == "gaussian-ntk"

    def test_negative_step_size_names_key(self):
        with pytest.raises(ConfigError, match="step_size"):
            parse_config(CONJUGATE_SVGD.replace("step_size = 0.05", "step_size = -0.1"))

    def test_unknown_kernel_lists_options(self):
        with pytest.raises(ConfigError) as info:
            parse_config(CONJUGATE_SVGD + '[kernel]\nname = "laplace"\n')
        assert "rbf" in str(info.value) and "gaussian-ntk" in str(info.value)

    def test_parse_error_reports_location(self):
        with pytest.raises(ConfigError, match="line"):
            parse_config("subcommand = \n")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="flow.stepsize|stepsize"):
            parse_config(CONJUGATE_SVGD.replace("step_size", "stepsize"))

    def test_subcommand_mismatch(self):
        with pytest.raises(ConfigError, match="subcommand"):
            parse_config(CONJUGATE_SVGD, subcommand="bbvi")

    def test_ganflow_needs_normalized_low_dim_data(self):
        with pytest.raises(ConfigError, match="ganflow"):
            parse_config(CONJUGATE_SVGD.replace('"svgd"', '"ganflow"'))

    def test_seed_override(self):
        assert parse_config(CONJUGATE_SVGD, seed=11).seed == 11


class TestCli:
    def test_success(self, tmp_path, capsys):
        cfg = write(tmp_path, CONJUGATE_SVGD)
        assert main(["svgd", "--config", str(cfg), "--output", str(tmp_path / "out")]) == 0
        printed = capsys.readouterr().out.split()
        assert any(p.endswith("svgd_particles.csv") for p in printed)
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["status"] == "ok"
        assert summary["library"] == "kgflow" and summary["version"]
        assert summary["config"]["flow"]["num_particles"] == 30
        assert summary["wall_clock_seconds"] >= 0
        assert len(summary["records"]) == 5

    def test_config_error(self, tmp_path, capsys):
        cfg = write(tmp_path, CONJUGATE_SVGD.replace("step_size = 0.05", "step_size = 0.0"))
        assert main(["svgd", "--config", str(cfg), "--output", str(tmp_path / "out")]) == 1
        assert "step_size" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["svgd", "--config", str(tmp_path / "nope.toml"), "--output", str(tmp_path)]) == 1

    def test_missing_output_dir(self, tmp_path):
        assert main(["svgd", "--config", str(write(tmp_path, CONJUGATE_SVGD))]) == 1

    def test_numerical_failure(self, tmp_path, capsys):
        cfg = write(tmp_path, DIVERGENT_SVGD)
        out = tmp_path / "out"
        assert main(["svgd", "--config", str(cfg), "--output", str(out)]) == 2
        assert "step" in capsys.readouterr().err
        summary = json.loads((out / "summary.json").read_text())
        assert summary["status"] == "failed"
        assert summary["step_index"] >= 1

    @pytest.mark.parametrize("sub", ["bbvi", "ganflow"])
    def test_parameter_subcommands(self, tmp_path, sub):
        text = CONJUGATE_SVGD.replace('"svgd"', f'"{sub}"')
        if sub == "ganflow":
            text = text.replace('family = "conjugate"\nobservation = [1.0]', 'family = "gaussian"\nmean = [1.0]\ncovariance = [[1.0]]')
        out = tmp_path / "out"
        assert main([sub, "--config", str(write(tmp_path, text)), "--output", str(out), "--plot"]) == 0
        name = "bbvi_params.csv" if sub == "bbvi" else "gan_params.csv"
        header, rows = read_trajectory_csv(out / name)
        assert header == ["step", "time", "mu_0", "a_00"]
        assert sorted(rows) == [0, 10, 20, 30, 40]
        assert (out / "figure.svg").exists()


class TestCsv:
    def test_single_particle_file(self, tmp_path):
        traj = FlowTrajectory(0.1)
        traj.append(0, 0.0, ParticleEnsemble(np.array([[0.25]])))
        path = emit_trajectory(traj, tmp_path / "p.csv")
        lines = path.read_text().splitlines()
        assert lines == ["step,time,particle_id,dim_0", "0,0.0,0,0.25"]

    def test_round_trip_is_exact(self, tmp_path, rng):
        traj = FlowTrajectory(0.1)
        states = [rng.standard_normal((7, 3)) * 10.0 ** rng.integers(-8, 8, size=(7, 3)) for _ in range(3)]
        for k, xs in enumerate(states):
            traj.append(k, k * 0.1, ParticleEnsemble(xs))
        path = emit_trajectory(traj, tmp_path / "p.csv")
        header, rows = read_trajectory_csv(path)
        assert len(header) == 3 + 3
        for k, xs in enumerate(states):
            assert rows[k][0] == k * 0.1
            np.testing.assert_array_equal(rows[k][1], xs)

    def test_parameter_schema(self, tmp_path):
        traj = FlowTrajectory(0.1)
        params = GaussianVariationalParams([1.0, 2.0], [[1.0, 0.5], [0.0, 2.0]])
        traj.append(0, 0.0, params)
        header, rows = read_trajectory_csv(emit_trajectory(traj, tmp_path / "q.csv"))
        assert header == ["step", "time", "mu_0", "mu_1", "a_00", "a_01", "a_10", "a_11"]
        np.testing.assert_array_equal(rows[0][1], [1.0, 2.0, 1.0, 0.5, 0.0, 2.0])

    @pytest.mark.parametrize("sub", ["svgd", "compare"])
    def test_repeat_runs_are_byte_identical(self, tmp_path, sub):
        text = CONJUGATE_SVGD.replace('"svgd"', f'"{sub}"')
        outs = []
        for k in range(2):
            out = tmp_path / f"run{k}"
            run_experiment(parse_config(text, output_dir=out))
            outs.append(out)
        csvs = sorted(p.name for p in outs[0].glob("*.csv"))
        assert csvs
        for name in csvs:
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


class TestPlot:
    def test_panels_match_records(self, tmp_path):
        out = tmp_path / "out"
        result = run_experiment(parse_config(CONJUGATE_SVGD, output_dir=out, emit_plot=True))
        svg = out / "figure.svg"
        assert svg in result.files
        assert count_panels(svg) == len(result.trajectories["svgd"])

    def test_empty_trajectory_single_panel(self, tmp_path):
        emit_plot(make_gaussian([0.0, 0.0], np.eye(2)), tmp_path / "f.svg")
        assert count_panels(tmp_path / "f.svg") == 1

    def test_byte_identical_svg(self, tmp_path):
        target = make_gaussian([0.0], [[1.0]])
        traj = FlowTrajectory(0.1)
        traj.append(0, 0.0, ParticleEnsemble(np.linspace(-1, 1, 5)[:, None]))
        emit_plot(target, tmp_path / "a.svg", None, traj)
        emit_plot(target, tmp_path / "b.svg", None, traj)
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()

    def test_three_dimensions_rejected(self, tmp_path):
        with pytest.raises(UnsupportedDimensionError):
            emit_plot(make_gaussian(np.zeros(3), np.eye(3)), tmp_path / "f.svg")


class TestCompare:
    def test_zero_steps_identical_clouds(self):
        cfg = parse_config(GAUSSIAN_COMPARE.replace("num_steps = 1500", "num_steps = 0").replace("record_every = 500\n", ""))
        result = run_experiment(cfg)
        assert len(result.records) == 1
        assert result.records[0]["energy_distance"] == 0.0

    def test_gaussian_target_endpoints(self):
        result = run_experiment(parse_config(GAUSSIAN_COMPARE))
        final = result.records[-1]
        mean, cov = np.array([0.5, -0.5]), np.array([[1.0, 0.3], [0.3, 0.8]])
        # particle moments are deterministic; the BBVI sample cloud carries Monte Carlo noise, so use (mu, Sigma)
        np.testing.assert_allclose(final["svgd_mean"], mean, atol=0.05)
        np.testing.assert_allclose(final["svgd_covariance"], cov, atol=0.1)
        bbvi = result.trajectories["bbvi"].final
        np.testing.assert_allclose(bbvi.mu, mean, atol=0.05)
        np.testing.assert_allclose(bbvi.sigma, cov, atol=0.1)
        assert all(r["ratio"] < 5 for r in result.records)
