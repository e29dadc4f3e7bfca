"""Command-line pipeline contracts: generation, reconstruction,
evaluation, noise harvesting, config precedence, artifact formats."""

import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from pauslab import cli
from pauslab.core import Grid2D, Image2D, RFFrame, SosMap
from pauslab.dataset import (
    DatasetRecord,
    load_manifest,
    read_record,
    read_tensors,
    write_record,
    write_sos,
)


def read_pgm16(path):
    raw = Path(path).read_bytes()
    assert raw.startswith(b"P5\n")
    second = raw.index(b"\n", 3)
    third = raw.index(b"\n", second + 1)
    w, h = map(int, raw[3:second].split())
    assert raw[second + 1:third] == b"65535"
    pixels = np.frombuffer(raw[third + 1:], ">u2").reshape(h, w)
    return pixels.astype(np.float64) / 65535.0


def run_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class TestConfigResolution:
    def test_parse_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# comment\n"
            "n = 4\n"
            "kind=eval_pattern1\n"
            "noise=false\n"
            "\n"
            "out=runs/a\n")
        vals = cli.parse_config_file(cfg)
        assert vals == {"n": 4, "kind": "eval_pattern1", "noise": False,
                        "out": "runs/a"}

    def test_parse_rejects_bare_words(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("just-a-word\n")
        with pytest.raises(ValueError):
            cli.parse_config_file(cfg)

    def test_precedence_flags_over_file_over_defaults(self):
        resolved = cli.resolve_params(
            defaults={"n": 1, "seed": 0, "out": "d"},
            file_values={"n": 5, "seed": 9},
            flag_values={"n": 7, "seed": None, "out": None})
        assert resolved == {"n": 7, "seed": 9, "out": "d"}

    def test_unknown_file_key_rejected(self):
        with pytest.raises(ValueError):
            cli.resolve_params({"n": 1}, {"m": 2}, {})

    def test_presets(self):
        desk = cli.get_preset("desk")
        assert desk.sim_grid.nx == 256 and desk.sim_grid.dx == 0.1e-3
        assert desk.transducer.n_elements == 64
        assert desk.f0 == 3e6
        assert desk.sos_grid.nx == 384
        paper = cli.get_preset("paper")
        assert paper.sim_grid.nx == 1536 and paper.sim_grid.dx == 0.025e-3
        assert paper.transducer.n_elements == 128
        assert paper.f0 == 7e6
        with pytest.raises(ValueError):
            cli.get_preset("pocket")


class TestPgmOutput:
    def test_round_trip_and_sidecar(self, tmp_path):
        rng = np.random.default_rng(3)
        grid = Grid2D(24, 16, 0.05e-3)
        img = Image2D(rng.uniform(0, 1, (24, 16)).astype(np.float32),
                      grid, "pa_recon")
        out = tmp_path / "img.pgm"
        cli.write_pgm16(out, img)
        back = read_pgm16(out)
        assert back.shape == (16, 24)  # rows are depth
        assert np.abs(back.T - img.values).max() <= 0.5 / 65535.0 + 1e-12
        sidecar = (tmp_path / "img.txt").read_text()
        assert "kind=pa_recon" in sidecar
        assert "nx=24" in sidecar and "nz=16" in sidecar
        assert "dx_m=5e-05" in sidecar


class TestGenerate:
    def test_two_records_manifest_and_labels(self, p3_dataset):
        files = sorted(p3_dataset.glob("*.paus"))
        assert [p.name for p in files] == ["rec_000000.paus",
                                           "rec_000001.paus"]
        man = load_manifest(p3_dataset / "manifest.json")
        assert len(man["records"]) == 2
        for p in files:
            rec = read_record(p)
            assert rec.meta["phantom_kind"] == "P3"
            assert rec.rf.data.shape == (64, 512)
            assert rec.sos.values.shape == (384, 384)
            assert rec.pa_rf is not None and rec.p0 is not None
        assert (p3_dataset / "resolved.json").exists()
        resolved = json.loads((p3_dataset / "resolved.json").read_text())
        assert resolved["command"] == "generate" and resolved["seed"] == 7

    def test_record_i_uses_seed_plus_i(self, p3_dataset, tmp_path):
        # seed 8, record 0 must equal seed 7, record 1 byte for byte
        out = tmp_path / "shift"
        rc = cli.main(["generate", "--n", "1", "--kind", "eval_pattern3",
                       "--seed", "8", "--out", str(out)])
        assert rc == 0
        assert (out / "rec_000000.paus").read_bytes() == \
            (p3_dataset / "rec_000001.paus").read_bytes()

    def test_simulate_reproduces_records_bitwise(self, p3_dataset, tmp_path):
        out = tmp_path / "resim"
        rc = cli.main(["simulate", "--in", str(p3_dataset), "--out",
                       str(out), "--seed", "7", "--threads", "2"])
        assert rc == 0
        for name in ("rec_000000.paus", "rec_000001.paus"):
            assert (out / name).read_bytes() == \
                (p3_dataset / name).read_bytes()

    def test_missing_config_file_exits_nonzero(self, tmp_path):
        rc = cli.main(["generate", "--n", "1", "--kind", "training",
                       "--seed", "0", "--out", str(tmp_path / "x"),
                       "--config", str(tmp_path / "missing.cfg")])
        assert rc == 2


@pytest.fixture(scope="session")
def uniform_img(p3_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("recon") / "img.pgm"
    rc = cli.main(["reconstruct", "--in",
                   str(p3_dataset / "rec_000000.paus"), "--out",
                   str(out), "--sos", "uniform:1540", "--cfl", "0.45"])
    assert rc == 0
    return out


class TestReconstruct:
    def test_uniform_writes_image_in_unit_range(self, uniform_img):
        img = read_pgm16(uniform_img)
        assert img.shape == (512, 512)
        assert img.min() >= 0.0 and img.max() == 1.0
        assert (uniform_img.parent / "img.txt").exists()
        resolved = json.loads(
            (uniform_img.parent / "img.resolved.json").read_text())
        assert resolved["sos"] == "uniform:1540"

    def test_constant_map_equals_uniform(self, p3_dataset, uniform_img,
                                         tmp_path):
        const = tmp_path / "c1540.paus"
        write_sos(SosMap(np.full((384, 384), 1540.0, np.float32), 0.1e-3),
                  const)
        out = tmp_path / "img_map.pgm"
        rc = cli.main(["reconstruct", "--in",
                       str(p3_dataset / "rec_000000.paus"), "--out",
                       str(out), "--sos", f"map:{const}", "--cfl", "0.45"])
        assert rc == 0
        a, b = read_pgm16(uniform_img), read_pgm16(out)
        assert np.abs(a - b).max() <= 1e-5 + 1.0 / 65535.0

    def test_autofocus_mode_writes_curve_and_choice(self, p3_dataset,
                                                    tmp_path):
        out = tmp_path / "af.pgm"
        rc = cli.main(["reconstruct", "--in",
                       str(p3_dataset / "rec_000000.paus"), "--out",
                       str(out), "--sos", "autofocus", "--cfl", "0.45"])
        assert rc == 0
        rows = run_csv(tmp_path / "af_sharpness.csv")
        assert len(rows) == 41
        assert rows[0]["candidate_sos"] == "1400.0"
        resolved = json.loads((tmp_path / "af.resolved.json").read_text())
        assert 1400.0 <= resolved["chosen_sos"] <= 1600.0

    def test_bad_sos_spec(self, p3_dataset, tmp_path):
        rc = cli.main(["reconstruct", "--in",
                       str(p3_dataset / "rec_000000.paus"), "--out",
                       str(tmp_path / "x.pgm"), "--sos", "magic"])
        assert rc == 2


class TestAutofocusCommand:
    def test_sweep_csv(self, p3_dataset, tmp_path):
        out = tmp_path / "sweep.csv"
        rc = cli.main(["autofocus", "--in",
                       str(p3_dataset / "rec_000000.paus"), "--out",
                       str(out), "--low", "1450", "--high", "1550",
                       "--step", "10"])
        assert rc == 0
        rows = run_csv(out)
        assert [float(r["candidate_sos"]) for r in rows] == \
            [1450.0 + 10 * k for k in range(11)]
        assert all(float(r["sharpness"]) > 0 for r in rows)


def synth_record(tmp_dir: Path, name: str, seed: int) -> Path:
    """Training-kind record with tiny tensors; no acoustic simulation."""
    rng = np.random.default_rng(seed)
    rec = DatasetRecord(
        rf=RFFrame(rng.normal(size=(4, 16)).astype(np.float32), 20e6),
        sos=SosMap(rng.uniform(1400, 1600, (32, 32)).astype(np.float32),
                   0.1e-3),
        meta={"seed": seed, "phantom_kind": "training", "preset": "desk",
              "background_sos": 1500.0, "snr_db": None,
              "pipeline_version": 1})
    path = tmp_dir / name
    write_record(rec, path)
    return path


class TestEvaluate:
    def make_pair(self, tmp_path, offset: float):
        data, pred = tmp_path / "data", tmp_path / "pred"
        data.mkdir()
        pred.mkdir()
        for i in range(3):
            p = synth_record(data, f"rec_{i:06d}.paus", 100 + i)
            rec = read_record(p)
            write_sos(SosMap(rec.sos.values + offset, rec.sos.resolution,
                             rec.sos.origin), pred / p.name)
        return data, pred

    def test_identity_predictions_rmse_zero(self, tmp_path):
        data, pred = self.make_pair(tmp_path, 0.0)
        out = tmp_path / "report.csv"
        rc = cli.main(["evaluate", "--pred", str(pred), "--data", str(data),
                       "--out", str(out)])
        assert rc == 0
        rows = run_csv(out)
        assert all(float(r["rmse"]) == 0.0 for r in rows)

    def test_constant_offset_aggregates(self, tmp_path):
        data, pred = self.make_pair(tmp_path, 15.0)
        out = tmp_path / "report.csv"
        assert cli.main(["evaluate", "--pred", str(pred), "--data",
                         str(data), "--out", str(out)]) == 0
        rows = run_csv(out)
        mean = [r for r in rows if r["record_id"] == "mean"
                and r["region_label"] == "Global"]
        std = [r for r in rows if r["record_id"] == "std"
               and r["region_label"] == "Global"]
        assert float(mean[0]["rmse"]) == pytest.approx(15.0, abs=1e-5)
        assert float(std[0]["rmse"]) == pytest.approx(0.0, abs=1e-9)

    def test_missing_prediction_names_record(self, tmp_path, capsys):
        data, pred = self.make_pair(tmp_path, 0.0)
        (pred / "rec_000001.paus").unlink()
        rc = cli.main(["evaluate", "--pred", str(pred), "--data", str(data),
                       "--out", str(tmp_path / "r.csv")])
        assert rc == 2
        assert "rec_000001" in capsys.readouterr().err

    def test_eval_record_region_rows(self, p3_dataset, tmp_path):
        pred = tmp_path / "pred"
        pred.mkdir()
        for p in sorted(p3_dataset.glob("*.paus")):
            write_sos(read_record(p).sos, pred / p.name)
        out = tmp_path / "report.csv"
        rc = cli.main(["evaluate", "--pred", str(pred), "--data",
                       str(p3_dataset), "--out", str(out), "--skip-recon"])
        assert rc == 0
        rows = run_csv(out)
        labels = {r["region_label"] for r in rows
                  if r["record_id"] == "rec_000000"}
        assert labels == {"Background", "Inclusions", "Global"}
        assert all(float(r["rmse"]) == 0.0 for r in rows)

    def test_recon_metric_columns_filled(self, p3_dataset, tmp_path):
        pred = tmp_path / "pred"
        pred.mkdir()
        name = "rec_000000.paus"
        data = tmp_path / "data"
        data.mkdir()
        (data / name).write_bytes((p3_dataset / name).read_bytes())
        write_sos(read_record(p3_dataset / name).sos, pred / name)
        out = tmp_path / "report.csv"
        rc = cli.main(["evaluate", "--pred", str(pred), "--data", str(data),
                       "--out", str(out), "--cfl", "0.45"])
        assert rc == 0
        glob = [r for r in run_csv(out) if r["record_id"] == "rec_000000"
                and r["region_label"] == "Global"][0]
        assert float(glob["rmse"]) == 0.0
        assert 0.0 < float(glob["ssim"]) <= 1.0
        assert 0.1 < float(glob["fwhm_mm"]) < 3.0
        assert float(glob["snr_db"]) > 0.0


class TestNoiseHarvest:
    def test_bank_from_records_and_reuse(self, tmp_path):
        data = tmp_path / "data"
        data.mkdir()
        rng = np.random.default_rng(0)
        for i in range(3):
            rec = DatasetRecord(
                rf=RFFrame(rng.normal(size=(64, 512)).astype(np.float32),
                           20e6),
                sos=SosMap(np.full((8, 8), 1500.0, np.float32), 1e-4),
                meta={"seed": i, "phantom_kind": "training",
                      "preset": "desk", "snr_db": None,
                      "pipeline_version": 1})
            write_record(rec, data / f"rec_{i:06d}.paus")
        bank_path = tmp_path / "bank.paus"
        rc = cli.main(["noise-harvest", "--in", str(data), "--out",
                       str(bank_path)])
        assert rc == 0
        tensors, meta = read_tensors(bank_path)
        assert tensors["noise_bank"].shape == (3, 64, 50)
        assert meta["n_templates"] == 3

    def test_generate_with_bank_stamps_template_index(self, tmp_path,
                                                      p3_dataset):
        bank_path = tmp_path / "bank.paus"
        rc = cli.main(["noise-harvest", "--in", str(p3_dataset), "--out",
                       str(bank_path)])
        assert rc == 0
        out = tmp_path / "gen"
        rc = cli.main(["generate", "--n", "1", "--kind", "eval_pattern3",
                       "--seed", "7", "--out", str(out),
                       "--noise-bank", str(bank_path)])
        assert rc == 0
        rec = read_record(out / "rec_000000.paus")
        assert "system_noise_index" in rec.rf.meta


class TestEntryPoint:
    def test_module_help(self):
        proc = subprocess.run(
            [sys.executable, "-m", "pauslab.cli", "--help"],
            capture_output=True, text=True)
        assert proc.returncode == 0
        for name in ("generate", "simulate", "reconstruct", "autofocus",
                     "evaluate", "noise-harvest"):
            assert name in proc.stdout