import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from aign import __version__
from aign.cli import fmt, main


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def table(text):
    body = [line for line in text.splitlines() if not line.startswith("#")]
    rows = list(csv.DictReader(io.StringIO("\n".join(body))))
    return rows


def num(cell):
    return float(cell) if cell != "" else None


class TestFormatting:
    def test_numbers(self):
        assert fmt(0.5) == "0.5"
        assert fmt(3) == "3"
        assert fmt(2.5e-5) == "2.5e-05"
        assert "e" not in fmt(1.5e-4)
        assert fmt(None) == ""
        assert fmt(float("nan")) == ""
        assert fmt(True) == "true"

    def test_header_block(self, capsys):
        code, out, _ = run(["mi-sweep", "--set", "num=2"], capsys)
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == f"# aign {__version__} mi-sweep"
        assert "# sweep = velocity" in lines
        assert "# m = 1" in lines
        assert out.endswith("\r\n")


class TestMiSweep:
    def test_exponential_blank_below_regime(self, capsys):
        code, out, _ = run(["mi-sweep", "--set", "start=1", "--set", "stop=10", "--set", "num=10"], capsys)
        assert code == 0
        rows = table(out)
        assert len(rows) == 10
        for row in rows:
            v = float(row["v"])
            assert (row["mi_exponential"] == "") == (v < np.sqrt(2))
            assert float(row["lower_bound"]) <= float(row["upper_bound"])

    def test_sigma2_sweep_interior_minimum(self, capsys):
        code, out, _ = run(["mi-sweep", "--defaults", "fig4"], capsys)
        assert code == 0
        rows = table(out)
        upper = [float(r["upper_bound"]) for r in rows]
        k = int(np.argmin(upper))
        assert 0 < k < len(upper) - 1
        assert list(rows[0]) == ["sigma2", "upper_bound", "lower_bound", "mi_uniform", "mi_exponential", "h_noise"]

    def test_bits(self, capsys):
        _, nats, _ = run(["mi-sweep", "--set", "values=2,3"], capsys)
        _, bits, _ = run(["mi-sweep", "--set", "values=2,3", "--bits"], capsys)
        for a, b in zip(table(nats), table(bits)):
            assert float(b["upper_bound"]) == pytest.approx(float(a["upper_bound"]) / np.log(2), rel=1e-9)

    def test_parallel_matches_serial(self, capsys):
        _, serial, _ = run(["mi-sweep", "--set", "num=4"], capsys)
        _, parallel, _ = run(["mi-sweep", "--set", "num=4", "--workers", "2"], capsys)
        assert serial == parallel


class TestSepSweep:
    def test_binary_rows(self, capsys):
        code, out, _ = run(["sep-sweep", "--set", "values=1,2,3,4,5,6,7,8", "--trials", "50000"], capsys)
        assert code == 0
        rows = table(out)
        assert [r["v"] for r in rows] == [str(v) for v in range(1, 9)]
        for r in rows:
            assert float(r["sep_simulated"]) <= float(r["sep_bound"]) + 4 * float(r["sep_stderr"])
            assert r["sep_analytic"] != ""

    def test_sep_grows_with_alphabet(self, capsys):
        code, out, _ = run(["sep-sweep", "--set", "T=2,4,8", "--set", "values=2", "--trials", "50000"], capsys)
        rows = table(out)
        sep = [float(r["sep_simulated"]) for r in rows]
        assert [r["T"] for r in rows] == ["2", "4", "8"]
        assert sep[0] < sep[1] < sep[2]
        assert rows[1]["sep_analytic"] == "" and rows[2]["sep_analytic"] == ""

    def test_bound_gap_closes(self, capsys):
        _, out, _ = run(["sep-sweep", "--set", "values=1,2,4,8", "--trials", "1000"], capsys)
        gap = [abs(float(r["sep_bound"]) - float(r["sep_analytic"])) for r in table(out)]
        assert np.all(np.diff(gap) < 0)

    def test_unreachable_threshold_is_regime_error(self, capsys):
        code, _, err = run(["sep-sweep", "--set", "priors=0.999,0.001", "--set", "values=0.2",
                            "--trials", "100"], capsys)
        assert code == 3
        assert "numerical-regime" in err

    def test_times_need_matching_size(self, capsys):
        code, _, err = run(["sep-sweep", "--set", "times=0,1,2", "--set", "values=1"], capsys)
        assert code == 2


class TestDiversity:
    def test_columns_and_relations(self, capsys):
        code, out, _ = run(["diversity", "--set", "values=0.5,1,1.5,2", "--trials", "40000"], capsys)
        assert code == 0
        rows = table(out)
        for r in rows:
            ml, lin = float(r["sep_ml"]), float(r["sep_linear"])
            se = np.hypot(float(r["sep_ml_stderr"]), float(r["sep_linear_stderr"]))
            if r["M"] == "1":
                assert ml == lin
            else:
                assert ml <= lin + 4 * se
        footer = [line for line in out.splitlines() if line.startswith("# slope")]
        assert len(footer) == 3

    def test_slope_ratio_two_molecules(self, capsys):
        _, out, _ = run(["diversity", "--defaults", "fig7", "--set", "M=1,2"], capsys)
        slopes = {}
        for line in out.splitlines():
            if line.startswith("# slope M="):
                parts = dict(p.split("=") for p in line[2:].split() if "=" in p)
                slopes[int(parts["M"])] = float(parts["simulated"])
        assert slopes[2] / slopes[1] == pytest.approx(2.0, rel=0.2)


class TestValidate:
    def test_default_passes(self, capsys):
        code, out, _ = run(["validate"], capsys)
        assert code == 0
        rows = {r["metric"]: r["value"] for r in table(out)}
        assert rows["verdict"] == "PASS"
        assert float(rows["var_empirical"]) == pytest.approx(float(rows["var_analytic"]), rel=0.1)

    def test_coarse_naive_steps_fail(self, capsys):
        code, out, err = run(["validate", "--set", "dt=0.1", "--no-bridge", "--trials", "3000"], capsys)
        assert code == 4
        assert {r["metric"]: r["value"] for r in table(out)}["verdict"] == "FAIL"
        assert "discretization" in err


class TestEstimate:
    def test_large_sample(self, capsys):
        code, out, _ = run(["estimate"], capsys)
        rows = {r["metric"]: r["value"] for r in table(out)}
        assert code == 0
        assert float(rows["mu_rel_error"]) < 0.02
        assert float(rows["lam_rel_error"]) < 0.02

    def test_fixture(self, capsys):
        code, out, _ = run(["estimate", "--set", "arrivals=2,3,4", "--set", "t0=1"], capsys)
        rows = {r["metric"]: r["value"] for r in table(out)}
        assert (rows["mu_hat"], rows["lam_hat"]) == ("2", "9")

    def test_single_molecule_rejected(self, capsys):
        code, _, err = run(["estimate", "--trials", "1"], capsys)
        assert code == 2
        assert "k >= 2" in err

    def test_degenerate_guidance(self, capsys):
        code, _, err = run(["estimate", "--set", "arrivals=2,2", "--set", "t0=1"], capsys)
        assert code == 3
        assert "more training molecules" in err


class TestConfig:
    def test_file_and_flag_precedence(self, tmp_path, capsys):
        cfg = tmp_path / "run.ini"
        cfg.write_text("# velocity sweep\nsweep = velocity\nvalues = 2, 3\nm = 2\n[mi-sweep]\nsigma2 = 0.5\n")
        _, out, _ = run(["mi-sweep", "--config", str(cfg), "--set", "m=3"], capsys)
        assert "# m = 3" in out
        assert "# sigma2 = 0.5" in out
        assert [r["v"] for r in table(out)] == ["2", "3"]

    def test_preset_below_file(self, tmp_path, capsys):
        cfg = tmp_path / "run.ini"
        cfg.write_text("num = 3\n")
        _, out, _ = run(["mi-sweep", "--defaults", "fig4", "--config", str(cfg)], capsys)
        assert "# v = 10" in out and len(table(out)) == 3

    def test_unknown_field_reports_line(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("d = 1\n\nvelocity = 3\n")
        code, _, err = run(["mi-sweep", "--config", str(cfg)], capsys)
        assert code == 2
        assert f"{cfg}:3" in err and "velocity" in err

    def test_unparsable_value(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("d = one\n")
        code, _, err = run(["mi-sweep", "--config", str(cfg)], capsys)
        assert code == 2 and f"{cfg}:1" in err and "'d'" in err

    def test_syntax_error(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("d = 1\nthis line has no separator\n")
        code, _, err = run(["mi-sweep", "--config", str(cfg)], capsys)
        assert code == 2 and f"{cfg}:2" in err

    @pytest.mark.parametrize("setting", ["d=0", "v=-1", "num=0", "values=3,2", "sweep=time", "m=0"])
    def test_invalid_values(self, setting, capsys):
        code, _, _ = run(["mi-sweep", "--set", setting], capsys)
        assert code == 2

    def test_wrong_preset(self, capsys):
        assert run(["mi-sweep", "--defaults", "fig7"], capsys)[0] == 2
        assert run(["mi-sweep", "--defaults", "fig9"], capsys)[0] == 2

    def test_missing_file(self, tmp_path, capsys):
        assert run(["mi-sweep", "--config", str(tmp_path / "nope.ini")], capsys)[0] == 2


class TestDeterminism:
    def test_byte_identical(self, tmp_path):
        outs = []
        for name in ("a.csv", "b.csv"):
            path = tmp_path / name
            assert main(["sep-sweep", "--set", "T=2,4", "--set", "values=1,3", "--trials", "20000",
                         "--seed", "5", "--out", str(path)]) == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_workers_do_not_change_output(self, capsys):
        args = ["diversity", "--set", "values=0.5,1", "--set", "M=1,2", "--trials", "20000"]
        _, serial, _ = run(args, capsys)
        _, parallel, _ = run(args + ["--workers", "2"], capsys)
        assert serial == parallel

    def test_seed_matters(self, capsys):
        args = ["sep-sweep", "--set", "values=1", "--trials", "20000"]
        _, a, _ = run(args + ["--seed", "1"], capsys)
        _, b, _ = run(args + ["--seed", "2"], capsys)
        assert a != b


def test_console_entry_point():
    result = subprocess.run([sys.executable, "-m", "aign.cli", "estimate", "--set", "arrivals=2,3,4",
                             "--set", "t0=1"], capture_output=True, text=True, check=False)
    assert result.returncode == 0
    assert "mu_hat,2" in result.stdout
