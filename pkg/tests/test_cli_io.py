import hashlib
import json
import xml.etree.ElementTree as ET

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capdrop import __version__
from capdrop.cli import DIAGRAM_HEADER, MOMENT_HEADER, main
from capdrop.config import ConfigError, RunConfig, parse_config, serialize
from capdrop.experiments import fundamental_diagram_scan
from capdrop.model_core import FixedValue, ModelParams
from capdrop.output import Table, format_cell, render_csv, write_results
from capdrop.svg import DiagramData, diagram_data, render_svg

SMALL = {
    "experiment": {
        "n_grid_max": 40,
        "sims_per_n": 3,
        "n_combos": 2,
        "sims_per_combo": 5,
        "c1_values": [1.0],
        "sigma_values": [0.5],
        "record_every": 5000,
    },
    "paths": 3,
}


class TestParseConfig:
    def test_empty_gives_defaults(self):
        cfg = parse_config(b"")
        assert cfg == parse_config(b"{}")
        assert cfg.model == ModelParams(c1=1, c2=3, v1=10, v2=60, sigma=1, n_max=200, road_length=1)
        assert cfg.n_cut == 150 and cfg.n_total == 150
        assert cfg.sim.t_end == 30 and cfg.sim.n_steps == 30_000

    def test_flags_override_file(self):
        doc = json.dumps({"model": {"sigma": 0.5}, "sim": {"master_seed": 3}}).encode()
        cfg = parse_config(doc, {"sigma": 0.0, "seed": 9})
        assert cfg.model.sigma == 0.0 and cfg.sim.master_seed == 9

    def test_sigma_zero_is_deterministic_mode(self):
        assert parse_config(None, {"sigma": 0}).model.sigma == 0.0

    def test_t_end_keeps_step_size(self):
        cfg = parse_config(None, {"t_end": 99.5})
        assert cfg.sim.n_steps == 99_500

    def test_n_total_above_n_max_names_invariant(self):
        with pytest.raises(ConfigError, match="n_total < n_max"):
            parse_config(None, {"n_total": 250, "n_max": 200})

    @pytest.mark.parametrize(
        "doc, path",
        [
            ({"model": {"c3": 1}}, "model.c3"),
            ({"bogus": 1}, "bogus"),
            ({"experiment": {"nope": 1}}, "experiment.nope"),
            ({"model": {"sigma": "x"}}, "model.sigma"),
            ({"model": {"sigma": -1}}, "model"),
            ({"sim": {"n_steps": 1.5}}, "sim.n_steps"),
            ({"sim": {"scheme": "RK4"}}, "sim.scheme"),
            ({"experiment": {"t_window": [3, 1]}}, "experiment.t_window"),
            ({"scenario": {"init": {"kind": "fixed"}}}, "scenario.init.value"),
            ({"paths": 0}, "paths"),
            ({"command": "fly"}, "command"),
        ],
    )
    def test_errors_name_field(self, doc, path):
        with pytest.raises(ConfigError) as err:
            parse_config(json.dumps(doc))
        assert err.value.path == path

    def test_malformed(self):
        with pytest.raises(ConfigError, match="malformed"):
            parse_config(b"{not json")
        with pytest.raises(ConfigError):
            parse_config(b"[1, 2]")

    def test_fixed_init(self):
        cfg = parse_config(json.dumps({"scenario": {"init": {"kind": "fixed", "value": 5}}}))
        assert cfg.init == FixedValue(5.0)

    @settings(max_examples=100, deadline=None)
    @given(
        sigma=st.floats(0, 3),
        c1=st.floats(0.1, 10),
        n_total=st.floats(1, 149),
        seed=st.integers(0, 2**64 - 1),
        steps=st.integers(1, 10**6),
        command=st.sampled_from(["simulate", "diagram", "scan", "validate", "moments", "crossings"]),
        svg=st.booleans(),
        init=st.one_of(
            st.just({"kind": "uniform", "lo": 1.0, "hi": None}),
            st.floats(0.01, 0.99).map(lambda f: {"kind": "fixed", "value": f}),
        ),
    )
    def test_round_trip(self, sigma, c1, n_total, seed, steps, command, svg, init):
        if init["kind"] == "fixed":
            init = {"kind": "fixed", "value": init["value"] * n_total}
        doc = {
            "command": command,
            "model": {"sigma": sigma, "c1": c1},
            "scenario": {"n_total": n_total, "init": init},
            "sim": {"master_seed": seed, "n_steps": steps},
            "emit_svg": svg,
        }
        cfg = parse_config(json.dumps(doc))
        assert parse_config(serialize(cfg)) == cfg


class TestOutput:
    def test_format(self):
        assert format_cell(0.1) == "0.10000000000000001"
        assert float(format_cell(0.1)) == 0.1
        assert format_cell(True) == "true" and format_cell(3) == "3"
        assert format_cell(None) == "" and format_cell(float("nan")) == "nan"

    @settings(max_examples=300)
    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_float_round_trip(self, x):
        assert float(format_cell(x)) == x

    def test_row_width_checked(self):
        with pytest.raises(ValueError):
            render_csv(Table(("a", "b"), [(1,)]))

    def test_manifest(self, tmp_path):
        cfg = RunConfig(output_dir=str(tmp_path))
        table = Table(("a", "b"), [(1, 0.5), (2, 1.5)])
        manifest = write_results({"t": table}, str(tmp_path), cfg)
        assert set(manifest) == {"config", "seed", "version", "files"}
        assert manifest["version"] == __version__ and manifest["seed"] == 0
        (entry,) = manifest["files"]
        data = (tmp_path / "t.csv").read_bytes()
        assert entry == {"name": "t.csv", "sha256": hashlib.sha256(data).hexdigest(), "rows": 2}
        assert data == b"a,b\n1,0.5\n2,1.5\n"
        on_disk = json.loads((tmp_path / "manifest.json").read_text())
        assert on_disk == manifest

    def test_unwritable_dir_reports_path(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match="file"):
            write_results({}, str(blocker / "sub"), RunConfig())


class TestSvg:
    @pytest.fixture(scope="class")
    @staticmethod
    def points():
        return fundamental_diagram_scan(ModelParams(), [10.0, 50.0, 80.0, 120.0], sims_per_n=5)

    def test_layers_and_colours(self, points):
        svg = render_svg(diagram_data(points))
        root = ET.fromstring(svg)
        ids = {el.get("id") for el in root}
        assert {"axes", "samples", "free-flow-samples", "mean", "deterministic"} <= ids
        text = svg.decode()
        assert "#999999" in text and "#d62728" in text and "#1f77b4" in text

    def test_pure(self, points):
        assert render_svg(diagram_data(points)) == render_svg(diagram_data(points))

    def test_sigma_zero_mean_on_deterministic_line(self):
        pts = fundamental_diagram_scan(ModelParams(sigma=0.0), [10.0, 20.0, 120.0, 140.0], sims_per_n=3)
        root = ET.fromstring(render_svg(diagram_data(pts)))
        lines = {el.get("id"): el.get("points") for el in root if el.tag.endswith("polyline")}
        assert lines["mean"] == lines["deterministic"]

    def test_empty_data_gives_axes_only(self):
        root = ET.fromstring(render_svg(DiagramData()))
        assert not [el for el in root.iter() if el.tag.endswith(("circle", "polyline"))]
        assert any(el.get("id") == "axes" for el in root)


class TestCli:
    def run(self, tmp_path, *args, doc=SMALL):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(doc))
        return main([*args, "--config", str(cfg)])

    def test_diagram_schema_and_determinism(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert self.run(tmp_path, "diagram", "--out", str(out1), "--svg") == 0
        assert self.run(tmp_path, "diagram", "--out", str(out2), "--svg") == 0
        header = (out1 / "diagram.csv").read_text().splitlines()[0]
        assert header == ",".join(DIAGRAM_HEADER) == "k,q_sample,sim_index,sample_time,is_free_flow"
        m1 = json.loads((out1 / "manifest.json").read_text())
        m2 = json.loads((out2 / "manifest.json").read_text())
        assert m1["files"] == m2["files"]
        assert "diagram.svg" in {f["name"] for f in m1["files"]}

    def test_validate_schema(self, tmp_path):
        assert self.run(tmp_path, "validate", "--out", str(tmp_path / "v")) == 0
        header = (tmp_path / "v" / "moment_ratios.csv").read_text().splitlines()[0]
        assert header == ",".join(MOMENT_HEADER)
        assert header == "combo_id,r0s,mu_theory,mu_sim,ratio_mean,gamma_theory,gamma_sim,ratio_var"

    @pytest.mark.parametrize("command", ["simulate", "scan", "moments", "crossings"])
    def test_other_commands(self, tmp_path, command):
        out = tmp_path / command
        assert self.run(tmp_path, command, "--out", str(out), "--t-end", "2") == 0
        manifest = json.loads((out / "manifest.json").read_text())
        for f in manifest["files"]:
            assert hashlib.sha256((out / f["name"]).read_bytes()).hexdigest() == f["sha256"]

    @pytest.mark.parametrize("study", ["convergence", "ci"])
    def test_validate_studies(self, tmp_path, study):
        doc = json.loads(json.dumps(SMALL))
        doc["experiment"].update(study=study, ci_sample_size=5, ci_windows=[[1, 2], [3, 4]])
        assert self.run(tmp_path, "validate", "--out", str(tmp_path / study), "--t-end", "5", doc=doc) == 0

    def test_config_error_exit_code(self, tmp_path, capsys):
        assert main(["moments", "--n-total", "250", "--n-max", "200"]) == 2
        assert "n_total < n_max" in capsys.readouterr().err
        bad = tmp_path / "bad.json"
        bad.write_text('{"model": {"zzz": 1}}')
        assert main(["moments", "--config", str(bad)]) == 2
        assert main(["moments", "--config", str(tmp_path / "missing.json")]) == 2

    def test_runtime_error_exit_code(self, tmp_path):
        # crossings of xi need persistence; free-flow scenario makes it a runtime failure
        assert main(["crossings", "--n-total", "30", "--out", str(tmp_path / "x"), "--t-end", "1"]) == 3

    def test_argparse_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["nonsense"])
        assert exc.value.code == 2
