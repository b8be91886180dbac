import csv
import io
import json

import numpy as np
import pytest

from hierattn.cli import main, parse_sweep
from hierattn.latent import random_latent
from hierattn.tensor_io import read_tensor, write_tensor


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestVerify:
    def test_pristine(self, capsys):
        code, out, _ = run(capsys, "verify")
        assert code == 0
        assert "FAIL" not in out

    def test_injected_fault(self, capsys):
        code, out, _ = run(capsys, "verify", "--inject-fault")
        assert code == 1 and "FAIL" in out

    def test_json(self, capsys):
        code, out, _ = run(capsys, "verify", "--json")
        results = json.loads(out)
        assert code == 0 and isinstance(results, list)
        assert all({"check", "passed", "detail"} <= set(r) for r in results)


class TestEquiv:
    def test_default(self, capsys):
        code, out, _ = run(capsys, "equiv", "--json")
        rep = json.loads(out)
        assert code == 0 and rep["passed"] and rep["tolerance"] == 1e-5

    def test_zero_tolerance_on_exact_path(self, capsys):
        # the degenerate layout reproduces the oracle bit for bit
        code, out, _ = run(capsys, "equiv", "--json", "--tolerance", "0")
        assert json.loads(out)["max_abs_diff"] == 0.0 and code == 0

    def test_oversized(self, capsys):
        code, _, err = run(capsys, "equiv", "--H", "128", "--W", "128")
        assert code == 2 and "resource limit" in err

    def test_config_file(self, capsys, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"T": 1, "H": 4, "W": 4, "seed": 3}))
        code, out, _ = run(capsys, "equiv", "--json", "--config", str(cfg), "--W", "8")
        assert code == 0 and "dims=(1, 1, 4, 8, 8)" in json.loads(out)["config"]

    def test_missing_config(self, capsys, tmp_path):
        code, _, err = run(capsys, "equiv", "--config", str(tmp_path / "nope.json"))
        assert code == 2 and "not found" in err

    def test_unknown_config_key(self, capsys, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text('{"depth": 3}')
        assert run(capsys, "equiv", "--config", str(cfg))[0] == 2


class TestFlops:
    def test_speedup_row(self, capsys):
        code, out, _ = run(capsys, "flops", "--T", "1", "--H", "64", "--W", "64", "--D", "16", "--K", "4")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert code == 0
        speed = [r for r in rows if r["branch"] == "speedup"][0]
        assert speed["analytic_map"] == "12.1905" and speed["counted_map"] == "12.1905"

    def test_sweep_row_count(self, capsys):
        code, out, _ = run(capsys, "flops", "--sweep", "K=1..4", "--T", "1", "--H", "24", "--W", "24",
                           "--D", "4", "--r", "1")
        assert code == 0
        assert len(list(csv.DictReader(io.StringIO(out)))) == 4 * 6

    def test_indivisible(self, capsys):
        code, _, err = run(capsys, "flops", "--H", "10", "--W", "8", "--K", "4")
        assert code == 2 and "divisible" in err

    def test_json_and_out(self, capsys, tmp_path):
        path = tmp_path / "f.json"
        assert run(capsys, "flops", "--json", "--out", str(path))[0] == 0
        assert json.loads(path.read_text())[0]["branch"] == "full"

    @pytest.mark.parametrize("spec,expect", [("K=1..3", [1, 2, 3]), ("2,4", [2, 4]), ("5", [5])])
    def test_parse_sweep(self, spec, expect):
        assert parse_sweep(spec) == expect


class TestBench:
    def test_small(self, capsys):
        code, out, _ = run(capsys, "bench", "--T", "1", "--H", "8", "--W", "8", "--D", "8", "--K", "2",
                           "--repeats", "3")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert code == 0 and float(rows[0]["wall_ms"]) > 0

    def test_repeats_one(self, capsys):
        code, _, err = run(capsys, "bench", "--repeats", "1")
        assert code == 2 and "repeats" in err


class TestHdmse:
    def test_constant(self, capsys, tmp_path):
        path = tmp_path / "c.ugt"
        write_tensor(path, np.full((1, 2, 32, 32, 3), 0.5, dtype=np.float32))
        code, out, _ = run(capsys, "hdmse", "--input", str(path))
        assert code == 0 and "total: 0.000000" in out

    def test_fixture(self, capsys, tmp_path):
        path = tmp_path / "r.ugt"
        write_tensor(path, random_latent((1, 1, 64, 64, 3), 0))
        code, out, _ = run(capsys, "hdmse", "--json", "--input", str(path))
        assert code == 0 and abs(json.loads(out)["total"] - 1.1174231334301197) <= 1e-6

    def test_too_small(self, capsys, tmp_path):
        path = tmp_path / "s.ugt"
        write_tensor(path, np.zeros((1, 1, 16, 16, 3), dtype=np.float32))
        code, _, err = run(capsys, "hdmse", "--input", str(path))
        assert code == 2 and "32" in err

    @pytest.mark.parametrize("metric", ["hd-fvd", "hd-lpips"])
    def test_unsupported_metric(self, capsys, tmp_path, metric):
        code, _, err = run(capsys, "hdmse", "--metric", metric, "--input", str(tmp_path / "x.ugt"))
        assert code == 2 and "unsupported" in err

    def test_missing_input(self, capsys, tmp_path):
        assert run(capsys, "hdmse", "--input", str(tmp_path / "x.ugt"))[0] == 2

    def test_corrupt_input(self, capsys, tmp_path):
        path = tmp_path / "bad.ugt"
        path.write_bytes(b"nope")
        assert run(capsys, "hdmse", "--input", str(path))[0] == 2


class TestDemo:
    def test_repeatable_and_seeded(self, capsys, tmp_path):
        a, b, c = (tmp_path / n for n in ("a.ugt", "b.ugt", "c.ugt"))
        assert run(capsys, "demo", "--out", str(a))[0] == 0
        assert run(capsys, "demo", "--out", str(b), "--threads", "4")[0] == 0
        assert run(capsys, "demo", "--out", str(c), "--seed", "1")[0] == 0
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes() != c.read_bytes()
        assert read_tensor(a).shape == (1, 2, 8, 8, 8)

    def test_bad_threads(self, capsys, tmp_path):
        assert run(capsys, "demo", "--threads", "0", "--out", str(tmp_path / "x.ugt"))[0] == 2


@pytest.mark.parametrize("argv", [["equiv", "--K", "3"], ["equiv", "--r", "3"], ["equiv", "--heads", "3"],
                                  ["equiv", "--T", "0"], ["nosuch"], []])
def test_usage_errors(capsys, argv):
    assert run(capsys, *argv)[0] == 2
