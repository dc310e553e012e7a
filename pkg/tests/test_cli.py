import csv
import math

import pytest

from sleprox import cli
from sleprox.cli import UsageError, fmt, load_config, main, parse_pairs


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestConfig:
    def test_pairs(self):
        cfg = parse_pairs(["# comment", "", "kappa = 6", "x=1,2", "family=powlog(beta=0.6)"])
        assert cfg == {"kappa": "6", "x": "1,2", "family": "powlog(beta=0.6)"}

    def test_meta_skipped(self):
        cfg = parse_pairs(["command=experiment", "sha256.results.csv=ab", "duration_s=1", "n=5"])
        assert cfg == {"n": "5"}

    @pytest.mark.parametrize("line", ["novalue", "=3"])
    def test_bad_lines(self, line):
        with pytest.raises(UsageError):
            parse_pairs([line])

    def test_overrides_win(self, tmp_path):
        f = tmp_path / "c.txt"
        f.write_text("kappa=3\nn=200\n")
        assert load_config(f, ["kappa=6"]) == {"kappa": "6", "n": "200"}

    def test_missing_file(self, tmp_path):
        with pytest.raises(UsageError):
            load_config(tmp_path / "nope.txt")

    def test_fmt(self):
        assert fmt(0.1) == "0.1" and fmt(math.nan) == "nan" and fmt(-math.inf) == "-inf"
        assert float(fmt(1 / 3)) == 1 / 3


class TestSimulate:
    def test_zero_horizon(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "t_max=0"]) == 0
        rows = read_csv(tmp_path / "trace.csv")
        assert rows == [["step", "t", "re", "im"], ["0", "0.0", "0.0", "0.0"]]

    def test_zero_driving(self, tmp_path):
        assert main(["simulate", "--zero-driving", "--svg", "--out", str(tmp_path), "dt=0.01",
                     "t_max=1", "samples=10"]) == 0
        rows = read_csv(tmp_path / "trace.csv")[1:]
        for _, t, re, im in rows:
            assert abs(float(re)) < 1e-9
            assert float(im) == pytest.approx(2 * math.sqrt(float(t)), rel=1e-9)
        assert (tmp_path / "trace.svg").read_text().startswith("<svg")
        assert "sha256.trace.csv=" in (tmp_path / "manifest.txt").read_text()

    def test_env_out_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
        assert main(["simulate", "t_max=0.01", "dt=0.001"]) == 0
        assert (tmp_path / "envout" / "trace.csv").exists()

    def test_bad_kappa(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "kappa=9"]) == cli.EXIT_RUNTIME


class TestExperiment:
    def test_manifest_replay(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["experiment", "point_prob", "--out", str(a), "--seed", "7", "kappa=6",
                     "n=300", "x=1,2", "eps=0.3"]) == 0
        assert main(["experiment", "--config", str(a / "manifest.txt"), "--out", str(b),
                     "--threads", "3"]) == 0
        assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()

    def test_unknown_kind(self, tmp_path):
        assert main(["experiment", "bogus", "--out", str(tmp_path)]) == cli.EXIT_USAGE

    def test_missing_kind(self, tmp_path):
        assert main(["experiment", "--out", str(tmp_path), "kappa=6"]) == cli.EXIT_USAGE

    def test_error_row_exit(self, tmp_path):
        assert main(["experiment", "interval_hit", "--out", str(tmp_path), "kappa=3", "n=100"]) == 2
        rows = read_csv(tmp_path / "results.csv")
        assert rows[-1][-1].startswith("SpecfunDomainError")

    def test_criterion_kind(self, tmp_path):
        assert main(["experiment", "criterion", "--out", str(tmp_path), "kappa=2",
                     "family=powlog(beta=0.6)"]) == 0
        rows = read_csv(tmp_path / "results.csv")
        assert rows[1][rows[0].index("verdict")] == "bounded"

    def test_svg(self, tmp_path):
        assert main(["experiment", "point_prob", "--svg", "--out", str(tmp_path), "n=100"]) == 0
        assert (tmp_path / "results.svg").exists()


class TestCriterion:
    @pytest.mark.parametrize("family,kappa,code", [
        ("itloglog(alpha=1)", 4, 10), ("powlog(beta=0.5)", 2, 10), ("const(c=0.1)", 2, 0),
        ("powlog(beta=0.6)", 2, 0), ("itloglog(alpha=1.5)", 4, 0),
    ])
    def test_exit_codes(self, family, kappa, code, capsys):
        assert main(["criterion", family, "--kappa", str(kappa)]) == code
        out = capsys.readouterr().out
        assert "verdict" in out and "block" in out

    def test_parse_error(self):
        assert main(["criterion", "powlog(gamma=1)", "--kappa", "2"]) == cli.EXIT_USAGE

    def test_kappa_domain(self):
        assert main(["criterion", "powlog(beta=1)", "--kappa", "6"]) == cli.EXIT_USAGE

    def test_inconclusive(self):
        code = main(["criterion", "custom(expr=x,hint=powlog(beta=0.6))", "--kappa", "2", "--r", "8"])
        assert code == 20

    def test_bad_flag(self):
        assert main(["criterion"]) == cli.EXIT_USAGE
