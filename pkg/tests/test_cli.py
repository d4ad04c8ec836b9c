import json
import math

import numpy as np
import pytest

from conelab.cli import main
from conelab.config import (
    ConfigError,
    parse_boundary,
    parse_coefficient,
    parse_cone,
    parse_config_text,
    parse_geometry,
    parse_range,
    validate,
)
from conelab.reporting import read_grid_csv, strip_volatile, write_grid_csv
from conelab.runner import run, suite


class TestConfigParsing:
    def test_flat_keys_and_comments(self):
        flat = parse_config_text("kind = spectrum  # the kind\n\ncone = cone:circle:theta=2\n")
        assert flat == {"kind": "spectrum", "cone": "cone:circle:theta=2"}

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("a = 1\na = 2\n")

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError) as err:
            validate({"kind": "spectrum", "cone": "cone:circle:theta=2", "thetta": "1"})
        assert "thetta" in str(err.value)

    def test_missing_required(self):
        with pytest.raises(ConfigError) as err:
            validate({"kind": "spectrum"})
        assert "cone" in str(err.value)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            validate({"kind": "no-such-thing"})

    def test_type_coercion(self):
        cfg = validate({"kind": "spectrum", "cone": "c", "modes": "12", "seed": "7"})
        assert cfg.params["modes"] == 12 and cfg.seed == 7

    def test_bad_value_named(self):
        with pytest.raises(ConfigError) as err:
            validate({"kind": "spectrum", "cone": "c", "modes": "twelve"})
        assert "modes" in str(err.value)


class TestLittleLanguages:
    def test_coefficient_families(self):
        assert parse_coefficient("identity:3").dimension == 3
        assert parse_coefficient("scalar:4:3").Lam == 4.0
        cg = parse_coefficient("convex_graph:1,1,1")
        assert cg.Lam == pytest.approx(math.sqrt(2))
        sec = parse_coefficient("cone2d:3.14159")
        assert sec.dimension == 2
        pert = parse_coefficient("perturbed:(convex_graph:1,1,1),(power:0.2,0.5)")
        x = np.array([[0.25, 0.0, 0.0]])
        assert np.allclose(pert(x), cg(x) * (1 + 0.2 * 0.5))

    def test_log_and_const_moduli(self):
        p1 = parse_coefficient("perturbed:(identity:3),(log:0.5)")
        x = np.array([[1.0, 0.0, 0.0]])
        assert p1(x)[0, 0, 0] == pytest.approx(1.5)
        p2 = parse_coefficient("perturbed:(identity:3),(const:0.25)")
        assert p2(x)[0, 0, 0] == pytest.approx(1.25)

    def test_unknown_family(self):
        with pytest.raises(ConfigError):
            parse_coefficient("mystery:1")

    def test_cones(self):
        sp = parse_cone("cone:circle:theta=3.0")
        assert sp.total_measure == pytest.approx(3.0)
        ss = parse_cone("cone:sphere:s=0.5")
        assert ss.ambient_dimension == 3.0
        with pytest.raises(ConfigError):
            parse_cone("cone:torus:r=1")

    def test_geometry(self):
        m = parse_geometry("interval:0,1,10")
        assert m.num_cells == 10
        g = parse_geometry("grid:0.75,16,3")
        assert g.num_nodes == 17**3

    def test_range(self):
        r = parse_range("1e-3:1e-1:3")
        assert np.allclose(r, [1e-3, 1e-2, 1e-1])
        r2 = parse_range("lin:0:1:5")
        assert np.allclose(r2, [0, 0.25, 0.5, 0.75, 1.0])

    def test_boundary(self):
        g = parse_boundary("linear:1,0.5", 2)
        assert g(np.array([[2.0, 2.0]]))[0] == pytest.approx(3.0)


class TestRunner:
    def test_spectrum_csv_columns(self, tmp_path):
        out = run(
            {"kind": "spectrum", "cone": "cone:circle:theta=3.14159", "modes": "4"},
            out_dir=str(tmp_path),
        )
        assert out.exit_code == 0
        from conelab.reporting import read_csv_columns

        cols = read_csv_columns(tmp_path / "spectrum.csv")
        # alpha = 2 pi k / theta for the circle
        assert cols["exponent"][1] == pytest.approx(2 * math.pi / 3.14159, rel=1e-6)
        assert (tmp_path / "spectrum.png").exists()
        assert (tmp_path / "report.json").exists()

    def test_unknown_key_exit_2(self, tmp_path):
        out = run({"kind": "spectrum", "thetta": "3"}, out_dir=str(tmp_path))
        assert out.exit_code == 2
        assert "thetta" in out.report["error"]

    def test_domain_rejection_exit_2(self, tmp_path):
        out = run(
            {"kind": "spectrum", "cone": "cone:circle:theta=9.1"}, out_dir=str(tmp_path)
        )
        assert out.exit_code == 2

    def test_failing_assertion_exit_1(self, tmp_path):
        out = run(
            {"kind": "check-very-weak", "field": "absx2", "sign": "harmonic"},
            out_dir=str(tmp_path),
        )
        assert out.exit_code == 1

    def test_determinism(self, tmp_path):
        flat = {"kind": "spectrum", "cone": "cone:circle:theta=2.5", "seed": "3"}
        r1 = run(dict(flat), out_dir=str(tmp_path / "a")).report
        r2 = run(dict(flat), out_dir=str(tmp_path / "b")).report
        assert json.dumps(strip_volatile(r1), sort_keys=True) == json.dumps(
            strip_volatile(r2), sort_keys=True
        )

    def test_config_echo_reruns_to_same_verdicts(self, tmp_path):
        flat = {"kind": "cone-energy", "cone": "cone:sphere:s=0.5", "coefficients": "0,1,0.2"}
        r1 = run(dict(flat), out_dir=str(tmp_path / "a")).report
        r2 = run(dict(r1["config"]), out_dir=str(tmp_path / "b")).report
        assert strip_volatile(r1)["verdicts"] == strip_volatile(r2)["verdicts"]


class TestSuite:
    def write_cfg(self, path, text):
        path.write_text(text)
        return str(path)

    def test_empty_manifest(self, tmp_path):
        out = suite([], out_dir=str(tmp_path))
        assert out.exit_code == 0
        assert out.report["members"] == []

    def test_aggregate_with_failure(self, tmp_path):
        good = self.write_cfg(tmp_path / "good.cfg", "kind = spectrum\ncone = cone:circle:theta=2\n")
        bad = self.write_cfg(tmp_path / "bad.cfg", "kind = spectrum\ncone = cone:circle:theta=9\n")
        out = suite([good, bad], out_dir=str(tmp_path / "out"))
        assert out.exit_code == 1
        assert out.report["failing"] == [bad]
        assert not out.report["all_pass"]

    def test_parallel_matches_serial(self, tmp_path):
        cfgs = [
            self.write_cfg(
                tmp_path / f"c{k}.cfg", f"kind = spectrum\ncone = cone:circle:theta={1+k}\n"
            )
            for k in range(3)
        ]
        s1 = suite(cfgs, out_dir=str(tmp_path / "s1"), workers=1)
        s2 = suite(cfgs, out_dir=str(tmp_path / "s2"), workers=3)
        assert [m["exit"] for m in s1.report["members"]] == [
            m["exit"] for m in s2.report["members"]
        ]


class TestCliEntry:
    def test_spectrum_subcommand(self, tmp_path, capsys):
        code = main(
            ["spectrum", "--set", "cone=cone:circle:theta=3.14159", "--out", str(tmp_path)]
        )
        assert code == 0
        assert "pass" in capsys.readouterr().out

    def test_campanato_flags_accepted(self, tmp_path):
        # tiny grid so the subcommand itself stays fast
        code = main(
            [
                "campanato",
                "--coeff",
                "convex_graph:1,1,1",
                "--frozen",
                "convex_graph:1,1,1",
                "--h",
                "0.05",
                "--levels",
                "1",
                "--out",
                str(tmp_path),
            ]
        )
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["verdicts"]["frozen_defect"]["pass"]
        assert (tmp_path / "levels.csv").exists()

    def test_bad_config_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("kind = spectrum\nthetta = 1\n")
        code = main(["spectrum", "--config", str(cfg)])
        assert code == 2


class TestGridCsvRoundTrip:
    def test_round_trip(self, tmp_path):
        from conelab.heat import GridFunction

        g = GridFunction.from_callable(lambda p: p[:, 0] * p[:, 1], 1.5, 33, n=2)
        path = tmp_path / "field.csv"
        write_grid_csv(str(path), g)
        back = read_grid_csv(str(path))
        assert np.allclose(back.values, g.values)
        assert back.halfwidth == pytest.approx(g.halfwidth)
