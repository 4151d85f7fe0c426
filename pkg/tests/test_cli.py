import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from specfactor import formats
from specfactor.cli import main
from specfactor.field import SignalStack, two_source_model, sample_factor_model
from specfactor.grid import build_grid
from specfactor.spectrum import dpss

SIM = {"d": 2, "n_side": 16, "count": 40, "seed": 7,
       "sources": [{"kind": "rect_lowpass", "amplitude": 2, "cutoff_scale": 4}, {"kind": "rational", "scale": 4}],
       "coefficients": {"kind": "normal", "scale": 1}}


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def sim_config(tmp_path):
    path = tmp_path / "sim.json"
    path.write_text(json.dumps(SIM))
    return path


@pytest.fixture
def dataset(tmp_path, sim_config, capsys):
    out = tmp_path / "signals.fase"
    assert run(["simulate", "--config", sim_config, "--output", out], capsys)[0] == 0
    return out


@pytest.fixture
def pgrams(tmp_path, dataset, capsys):
    out = tmp_path / "pg.fase"
    assert run(["estimate", dataset, "--method", "periodogram", "--output", out], capsys)[0] == 0
    return out


class TestFormats:
    def test_signal_round_trip(self, tmp_path):
        grid = build_grid(2, 8)
        stack = sample_factor_model(grid, two_source_model(), 5, seed=1)
        path = tmp_path / "s.fase"
        formats.write_signals(path, stack, provenance="x")
        back = formats.read_signals(path)
        np.testing.assert_array_equal(back.samples, stack.samples)
        np.testing.assert_array_equal(back.coeffs, stack.coeffs)

    def test_float32(self, tmp_path):
        stack = SignalStack(1, 16, np.random.default_rng(0).standard_normal((3, 16)))
        path = tmp_path / "s.fase"
        formats.write_signals(path, stack, dtype="<f4")
        back = formats.read_signals(path)
        np.testing.assert_array_equal(back.samples, stack.samples.astype(np.float32))
        assert back.coeffs is None

    def test_header_layout(self, tmp_path):
        grid = build_grid(2, 4)
        path = tmp_path / "p.fase"
        formats.write_spectra(path, grid, np.ones((2, grid.m)), method="periodogram")
        raw = path.read_bytes()
        magic, header, payload = raw.split(b"\n", 2)
        assert magic == b"FASE1"
        parsed = json.loads(header)
        assert list(parsed) == sorted(parsed)
        assert len(payload) == 2 * grid.m * 8
        assert np.frombuffer(payload, "<f8").tolist() == [1.0] * (2 * grid.m)

    @pytest.mark.parametrize("mangle", [
        lambda b: b"FASE2" + b[5:],
        lambda b: b[:-3],
        lambda b: b + b"\x00" * 8,
        lambda b: b[:5] + b"\n{bad json\n",
    ])
    def test_corrupt(self, tmp_path, mangle):
        grid = build_grid(2, 4)
        path = tmp_path / "p.fase"
        formats.write_spectra(path, grid, np.ones((1, grid.m)))
        path.write_bytes(mangle(path.read_bytes()))
        with pytest.raises(formats.FormatError):
            formats.read_spectra(path)

    def test_wrong_kind(self, tmp_path):
        grid = build_grid(2, 4)
        path = tmp_path / "b.fase"
        formats.write_spectra(path, grid, np.ones((1, grid.m)), kind="basis")
        with pytest.raises(formats.FormatError):
            formats.read_spectra(path)
        with pytest.raises(formats.FormatError):
            formats.read_signals(path)

    def test_taper_cache(self, tmp_path):
        first = formats.cached_dpss(tmp_path / "cache", 32, 1 / 16)
        assert len(list((tmp_path / "cache").iterdir())) == 1
        second = formats.cached_dpss(tmp_path / "cache", 32, 1 / 16)
        np.testing.assert_array_equal(first.tapers, second.tapers)
        np.testing.assert_array_equal(second.tapers, dpss(32, 1 / 16).tapers)
        np.testing.assert_array_equal(first.concentrations, second.concentrations)

    def test_eigenvalue_csv(self, tmp_path):
        path = tmp_path / "e.csv"
        formats.write_eigenvalues_csv(path, [3.0, 0.1])
        assert path.read_text() == "index,eigenvalue\n1,3.0\n2,0.1\n"
        formats.write_eigenvalues_csv(path, {4: [1.5]})
        assert path.read_text() == "seed,index,eigenvalue\n4,1,1.5\n"


class TestSimulateEstimate:
    def test_simulate_summary_and_determinism(self, tmp_path, sim_config, capsys):
        a, b = tmp_path / "a.fase", tmp_path / "b.fase"
        code, out, _ = run(["simulate", "--config", sim_config, "--output", a], capsys)
        assert code == 0
        summary = json.loads(out)
        assert (summary["n"], summary["N"], summary["r"], summary["seed"]) == (40, 16, 2, 7)
        run(["simulate", "--config", sim_config, "--output", b], capsys)
        assert a.read_bytes() == b.read_bytes()
        run(["simulate", "--config", sim_config, "--output", b, "--seed", 8], capsys)
        assert a.read_bytes() != b.read_bytes()

    def test_simulate_matches_library(self, dataset):
        grid = build_grid(2, 16)
        direct = sample_factor_model(grid, two_source_model(), 40, seed=7)
        np.testing.assert_array_equal(formats.read_signals(dataset).samples, direct.samples)

    def test_unknown_config_keys(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({**SIM, "colour": 1, "flavour": 2}))
        code, _, err = run(["simulate", "--config", path, "--output", tmp_path / "x"], capsys)
        assert code == 2
        assert "colour" in err and "flavour" in err

    def test_unknown_source_key(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({**SIM, "sources": [{"kind": "rational", "scale": 1, "width": 2}]}))
        code, _, err = run(["simulate", "--config", path, "--output", tmp_path / "x"], capsys)
        assert code == 2 and "width" in err

    def test_impulse_periodogram(self, tmp_path, capsys):
        samples = np.zeros((2, 8, 8))
        samples[:, 0, 0] = 1.0
        path = tmp_path / "imp.fase"
        formats.write_signals(path, SignalStack(2, 8, samples))
        out = tmp_path / "pg.fase"
        assert run(["estimate", path, "--output", out], capsys)[0] == 0
        header, grid, rows = formats.read_spectra(out)
        assert header["method"] == "periodogram"
        np.testing.assert_allclose(rows, 1 / 64, rtol=1e-14)

    def test_multitaper_header(self, tmp_path, dataset, capsys):
        out = tmp_path / "mt.fase"
        code, stdout, _ = run(["estimate", dataset, "--method", "multitaper", "--bandwidth", 1 / 8,
                               "--output", out], capsys)
        assert code == 0
        header, _, rows = formats.read_spectra(out)
        assert header["method"] == "multitaper" and header["tapers"] == 4 and rows.shape[0] == 40

    def test_estimate_deterministic(self, tmp_path, dataset, capsys):
        a, b = tmp_path / "a.fase", tmp_path / "b.fase"
        for path in (a, b):
            run(["estimate", dataset, "--method", "multitaper", "--output", path], capsys)
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_method(self, tmp_path, dataset, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["estimate", str(dataset), "--method", "wavelet", "--output", str(tmp_path / "x")])
        assert exc.value.code == 2

    def test_bad_bandwidth(self, tmp_path, dataset, capsys):
        code, _, _ = run(["estimate", dataset, "--method", "multitaper", "--bandwidth", 0.7,
                          "--output", tmp_path / "x"], capsys)
        assert code == 2

    def test_missing_and_corrupt_input(self, tmp_path, dataset, capsys):
        assert run(["estimate", tmp_path / "nope.fase", "--output", tmp_path / "x"], capsys)[0] == 3
        bad = tmp_path / "bad.fase"
        bad.write_bytes(b"NOTFASE\n{}\n")
        assert run(["estimate", bad, "--output", tmp_path / "x"], capsys)[0] == 3
        trunc = tmp_path / "trunc.fase"
        trunc.write_bytes(dataset.read_bytes()[:-16])
        assert run(["estimate", trunc, "--output", tmp_path / "x"], capsys)[0] == 3


class TestAnalyze:
    def test_outputs(self, tmp_path, pgrams, capsys):
        prefix = tmp_path / "res"
        code, out, _ = run(["analyze", pgrams, "--output", prefix], capsys)
        assert code == 0
        summary = json.loads(out)
        assert summary == json.loads((tmp_path / "res_summary.json").read_text())
        assert summary["count"] == 40 and summary["rank"] >= 1
        with open(tmp_path / "res_eigenvalues.csv") as fh:
            rows = list(csv.DictReader(fh))
        vals = [float(r["eigenvalue"]) for r in rows]
        assert len(vals) == 16 and vals == sorted(vals, reverse=True)
        _, grid, basis = formats.read_spectra(tmp_path / "res_basis.fase", kind="basis")
        np.testing.assert_allclose(basis @ basis.T, np.eye(summary["rank"]), atol=1e-10)
        header, _, proj = formats.read_spectra(tmp_path / "res_projected.fase")
        assert proj.shape == (40, grid.m) and (proj >= 0).all()
        assert header["source_method"] == "periodogram"

    def test_deterministic_and_sharding(self, tmp_path, pgrams, capsys):
        run(["analyze", pgrams, "--output", tmp_path / "a"], capsys)
        run(["analyze", pgrams, "--output", tmp_path / "b"], capsys)
        run(["analyze", pgrams, "--shards", 4, "--output", tmp_path / "c"], capsys)
        for suffix in ("_eigenvalues.csv", "_basis.fase", "_projected.fase"):
            assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()
        ea = np.loadtxt(tmp_path / "a_eigenvalues.csv", delimiter=",", skiprows=1)[:, 1]
        ec = np.loadtxt(tmp_path / "c_eigenvalues.csv", delimiter=",", skiprows=1)[:, 1]
        np.testing.assert_allclose(ec, ea, rtol=1e-10)

    def test_implicit_path_agrees(self, tmp_path, pgrams, capsys):
        run(["analyze", pgrams, "--output", tmp_path / "a"], capsys)
        run(["analyze", pgrams, "--dense-threshold", 0, "--output", tmp_path / "b"], capsys)
        ea = np.loadtxt(tmp_path / "a_eigenvalues.csv", delimiter=",", skiprows=1)[:, 1]
        eb = np.loadtxt(tmp_path / "b_eigenvalues.csv", delimiter=",", skiprows=1)[:, 1]
        np.testing.assert_allclose(eb, ea, rtol=1e-8, atol=1e-10 * ea[0])

    def test_rank_override(self, tmp_path, pgrams, capsys):
        code, out, _ = run(["analyze", pgrams, "--rank", 1, "--output", tmp_path / "r"], capsys)
        summary = json.loads(out)
        assert code == 0 and summary["rank"] == 1 and summary["rank_overridden"]
        code, _, err = run(["analyze", pgrams, "--rank", 17, "--output", tmp_path / "r"], capsys)
        assert code == 2 and "17" in err

    def test_project_other_stack(self, tmp_path, dataset, pgrams, capsys):
        mt = tmp_path / "mt.fase"
        run(["estimate", dataset, "--method", "multitaper", "--bandwidth", 1 / 32, "--output", mt], capsys)
        code, _, _ = run(["analyze", pgrams, "--project", mt, "--no-clip-negative", "--output", tmp_path / "p"],
                         capsys)
        assert code == 0
        header, _, _ = formats.read_spectra(tmp_path / "p_projected.fase")
        assert header["source_method"] == "multitaper"

    def test_identical_spectra_low_confidence(self, tmp_path, capsys):
        grid = build_grid(2, 8)
        path = tmp_path / "same.fase"
        formats.write_spectra(path, grid, np.tile(np.linspace(1, 2, grid.m), (10, 1)))
        code, out, _ = run(["analyze", path, "--output", tmp_path / "s"], capsys)
        summary = json.loads(out)
        assert code == 0 and summary["low_confidence"] and summary["rank"] == 1

    def test_too_few_spectra(self, tmp_path, capsys):
        grid = build_grid(2, 8)
        path = tmp_path / "one.fase"
        formats.write_spectra(path, grid, np.ones((1, grid.m)))
        assert run(["analyze", path, "--output", tmp_path / "o"], capsys)[0] == 2

    def test_grid_mismatch(self, tmp_path, pgrams, capsys):
        other = tmp_path / "other.fase"
        formats.write_spectra(other, build_grid(2, 8), np.ones((3, build_grid(2, 8).m)))
        assert run(["analyze", pgrams, "--project", other, "--output", tmp_path / "o"], capsys)[0] == 2


class TestEval:
    def test_single_cell(self, tmp_path, capsys):
        cfg = tmp_path / "exp.json"
        cfg.write_text(json.dumps({"n_sides": [8], "counts": [16], "seeds": [0, 1],
                                   "bandwidth_unprojected": 0.125, "bandwidth_projected": 0.0625,
                                   "estimators": ["multitaper"], "eigen_count": 4}))
        out = tmp_path / "mae.csv"
        code, stdout, _ = run(["eval", "--config", cfg, "--output", out, "--seed", 3], capsys)
        assert code == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert rows[0]["estimator"] == "multitaper" and rows[0]["seed"] == "3" and rows[0]["N"] == "8"
        eig = tmp_path / "mae_eigenvalues_n16_N8.csv"
        assert eig.read_text().startswith("seed,index,eigenvalue\n3,1,")
        first = out.read_bytes()
        run(["eval", "--config", cfg, "--output", out, "--seed", 3], capsys)
        assert out.read_bytes() == first

    def test_bad_experiment(self, tmp_path, capsys):
        cfg = tmp_path / "exp.json"
        cfg.write_text(json.dumps({"counts": [1]}))
        assert run(["eval", "--config", cfg, "--output", tmp_path / "m.csv"], capsys)[0] == 2
        cfg.write_text("{not json")
        assert run(["eval", "--config", cfg, "--output", tmp_path / "m.csv"], capsys)[0] == 2


def test_console_script(tmp_path, sim_config):
    out = tmp_path / "s.fase"
    proc = subprocess.run([sys.executable, "-m", "specfactor.cli", "simulate", "--config", str(sim_config),
                           "--output", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["command"] == "simulate"
    proc = subprocess.run([sys.executable, "-m", "specfactor.cli"], capture_output=True, text=True)
    assert proc.returncode == 2
