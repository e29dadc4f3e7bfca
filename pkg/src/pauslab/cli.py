"""Batch command-line pipelines: dataset generation, acoustic simulation,
reconstruction, autofocus sweeps, evaluation reports, and noise harvesting.

Every command resolves its parameters with precedence flags > config file
> defaults, writes the resolved snapshot as resolved.json next to its
outputs, and is deterministic under fixed (flags, seed, thread count).
Batch commands continue past per-record failures and exit 0 only when
every record succeeded.
"""

import argparse
import concurrent.futures
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    Grid2D,
    Image2D,
    RFFrame,
    SosMap,
    TransducerArray,
)
from .dataset import (
    DatasetRecord,
    read_record,
    read_sos,
    read_tensors,
    write_manifest,
    write_record,
    write_tensors,
)
from .errors import (
    DegenerateClasses,
    EmptyMask,
    MissingPair,
    NoPeak,
    OpenProfile,
    PauslabError,
)
from .metrics import RegionMask, lateral_fwhm, local_ssim, rmse, snr_db
from .phantom import (
    DEFAULT_ALPHA,
    eval_region_masks,
    eval_sos_map,
    make_initial_pressure,
    PhantomConfig,
    rasterize_phantom,
    realize_training_medium,
    sample_eval_phantom,
    sample_training_phantom,
)
from .recon import (
    ReconConfig,
    autofocus_sos,
    desk_recon_grid,
    paper_recon_grid,
    time_reversal,
)
from .signal import (
    add_system_noise,
    add_thermal_noise,
    apply_tgc,
    harvest_system_noise,
    normalize_channels,
)
from .wavesim import SimConfig, desk_sim_config, simulate_pa, simulate_plane_wave

PIPELINE_VERSION = 1

PATTERN_BY_KIND = {
    "eval_pattern1": "P1_curved_two_layer",
    "eval_pattern2": "P2_straight_layers",
    "eval_pattern3": "P3_inclusions_in_background",
}
KIND_LABEL = {
    "training": "training",
    "eval_pattern1": "P1",
    "eval_pattern2": "P2",
    "eval_pattern3": "P3",
}
KIND_BY_LABEL = {v: k for k, v in KIND_LABEL.items()}

CSV_COLUMNS = ("record_id", "region_label", "rmse", "ssim", "fwhm_mm",
               "snr_db")
SSIM_ROI_HALF = 1.5e-3  # 3x3 mm boxes around point sources


# -- presets -------------------------------------------------------------


@dataclass(frozen=True)
class Preset:
    """Bundle of grids and hardware settings for one scale of operation."""

    name: str
    sim_grid: Grid2D
    transducer: TransducerArray
    sim_cfg: SimConfig
    sos_grid: Grid2D
    recon_grid: Grid2D

    @property
    def f0(self) -> float:
        return self.transducer.center_frequency


def get_preset(name: str) -> Preset:
    if name == "desk":
        grid = Grid2D(256, 256, 0.1e-3)
        return Preset(
            name="desk",
            sim_grid=grid,
            transducer=TransducerArray(64, 0.4e-3, 3e6, 3, 1),
            sim_cfg=desk_sim_config(),
            sos_grid=Grid2D(384, 384, grid.extent[0] / 384),
            recon_grid=desk_recon_grid(grid.extent[1]),
        )
    if name == "paper":
        grid = Grid2D(1536, 1536, 0.025e-3)
        return Preset(
            name="paper",
            sim_grid=grid,
            transducer=TransducerArray(128, 0.3e-3, 7e6, 9, 3),
            sim_cfg=SimConfig(),
            sos_grid=Grid2D(384, 384, 0.1e-3),
            recon_grid=paper_recon_grid(),
        )
    raise ValueError(f"unknown preset {name!r}")


# -- config resolution ----------------------------------------------------


def parse_config_file(path) -> Dict[str, object]:
    """key=value lines; values parse as JSON scalars when possible.
    Blank lines and #-comments are ignored."""
    out: Dict[str, object] = {}
    for ln, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{ln}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def resolve_params(defaults: Dict[str, object],
                   file_values: Dict[str, object],
                   flag_values: Dict[str, object]) -> Dict[str, object]:
    """Precedence: flags > config file > defaults. Unknown file keys are
    rejected so typos fail loudly."""
    unknown = set(file_values) - set(defaults)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    resolved = dict(defaults)
    resolved.update(file_values)
    resolved.update({k: v for k, v in flag_values.items() if v is not None})
    return resolved


def write_resolved(params: Dict[str, object], near: Path) -> Path:
    """Snapshot the resolved configuration next to the command's outputs."""
    target = near / "resolved.json" if near.is_dir() else (
        near.parent / (near.stem + ".resolved.json"))
    target.write_text(json.dumps(params, sort_keys=True, indent=1) + "\n")
    return target


# -- artifact writers ------------------------------------------------------


def write_pgm16(path, img: Image2D) -> None:
    """Binary 16-bit PGM (maxval 65535, big-endian samples) with a text
    sidecar <stem>.txt carrying the grid metadata."""
    v = np.clip(img.values.astype(np.float64), 0.0, 1.0)
    pixels = np.round(v.T * 65535.0).astype(">u2")  # rows = depth
    path = Path(path)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.grid.nx} {img.grid.nz}\n65535\n".encode())
        f.write(pixels.tobytes())
    sidecar = path.parent / (path.stem + ".txt")
    lines = [
        f"kind={img.kind}",
        f"nx={img.grid.nx}",
        f"nz={img.grid.nz}",
        f"dx_m={img.grid.dx!r}",
        f"origin_x_m={img.grid.origin[0]!r}",
        f"origin_z_m={img.grid.origin[1]!r}",
        "maxval=65535",
    ]
    sidecar.write_text("\n".join(lines) + "\n")


def write_sharpness_csv(path, candidates: np.ndarray,
                        sharpness: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["candidate_sos", "sharpness"])
        for c, s in zip(candidates, sharpness):
            w.writerow([repr(float(c)), repr(float(s))])


# -- generation pipeline ---------------------------------------------------


def _rf_chain(rf: RFFrame, f0: float, snr_db_value: Optional[float],
              seed: int, bank: Optional[np.ndarray]) -> RFFrame:
    """Post-simulation conditioning in pipeline order: TGC, per-channel
    normalization, thermal noise, then harvested system noise."""
    rf = apply_tgc(rf, DEFAULT_ALPHA, f0)
    rf = normalize_channels(rf)
    if snr_db_value is not None:
        rf = add_thermal_noise(rf, snr_db_value, seed)
    if bank is not None:
        rf = add_system_noise(rf, bank, seed)
    return rf


def _draw_snr(record_seed: int, lo: float, hi: float) -> float:
    rng = np.random.default_rng(
        np.random.SeedSequence([record_seed, 0x7E12A1]))
    return float(rng.uniform(lo, hi))


def build_record(kind: str, record_seed: int, preset: Preset,
                 noise_range: Optional[Tuple[float, float]],
                 bank: Optional[np.ndarray]) -> DatasetRecord:
    """Deterministically realize one record from its seed: phantom,
    acoustic simulation, signal conditioning, ground-truth raster."""
    snr = None
    if noise_range is not None:
        snr = _draw_snr(record_seed, noise_range[0], noise_range[1])
    meta = {"seed": record_seed, "phantom_kind": KIND_LABEL[kind],
            "preset": preset.name, "snr_db": snr,
            "pipeline_version": PIPELINE_VERSION}
    if kind == "training":
        spec = sample_training_phantom(
            record_seed, PhantomConfig.for_grid(preset.sim_grid))
        medium = realize_training_medium(spec, preset.sim_grid, preset.f0)
        target = rasterize_phantom(spec, preset.sos_grid)
        rf = simulate_plane_wave(medium, preset.transducer, preset.sim_cfg)
        rf = _rf_chain(rf, preset.f0, snr, record_seed, bank)
        meta["background_sos"] = spec.background_sos
        sos = SosMap(target.sound_speed, preset.sos_grid.dx,
                     preset.sos_grid.origin)
        return DatasetRecord(rf, sos, meta=meta)

    pattern = PATTERN_BY_KIND[kind]
    medium, spec = sample_eval_phantom(pattern, record_seed,
                                       preset.sim_grid, preset.f0)
    sos = SosMap(eval_sos_map(spec, preset.sos_grid), preset.sos_grid.dx,
                 preset.sos_grid.origin)
    rf = simulate_plane_wave(medium, preset.transducer, preset.sim_cfg)
    rf = _rf_chain(rf, preset.f0, snr, record_seed, bank)
    p0 = make_initial_pressure(spec.absorber_coords, preset.sim_grid)
    # photoacoustic receive is one-way and feeds time reversal directly,
    # so it skips the gain/normalization chain
    pa_rf = simulate_pa(medium, preset.transducer, p0, preset.sim_cfg)
    meta["background_sos"] = spec.layer_soses[0]
    meta["absorbers"] = [list(c) for c in spec.absorber_coords]
    return DatasetRecord(rf, sos, p0=p0, pa_rf=pa_rf, meta=meta)


def _load_bank(path: Optional[str]) -> Optional[np.ndarray]:
    if path is None:
        return None
    tensors, _ = read_tensors(path)
    if "noise_bank" not in tensors:
        raise MissingPair(f"{path} has no 'noise_bank' tensor")
    return tensors["noise_bank"]


def _run_batch(indexed_jobs, worker, threads: int) -> List[str]:
    """Run jobs, reporting progress; returns failure messages."""
    failures: List[str] = []
    total = len(indexed_jobs)
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(threads) as pool:
            futures = {pool.submit(worker, job): label
                       for label, job in indexed_jobs}
            done = 0
            for fut in concurrent.futures.as_completed(futures):
                label = futures[fut]
                done += 1
                try:
                    fut.result()
                    print(f"[{done}/{total}] {label}", flush=True)
                except PauslabError as e:
                    failures.append(f"{label}: {e}")
                    print(f"[{done}/{total}] {label} FAILED: {e}",
                          file=sys.stderr, flush=True)
    else:
        for done, (label, job) in enumerate(indexed_jobs, 1):
            try:
                worker(job)
                print(f"[{done}/{total}] {label}", flush=True)
            except PauslabError as e:
                failures.append(f"{label}: {e}")
                print(f"[{done}/{total}] {label} FAILED: {e}",
                      file=sys.stderr, flush=True)
    return failures


def cmd_generate(args) -> int:
    defaults = {"n": 1, "kind": "training", "seed": 0, "preset": "desk",
                "out": "dataset", "threads": 1, "noise_low": -80.0,
                "noise_high": -40.0, "noise": True, "noise_bank": None}
    params = resolve_params(defaults, _file_values(args), {
        "n": args.n, "kind": args.kind, "seed": args.seed,
        "preset": args.preset, "out": args.out, "threads": args.threads,
        "noise_low": args.noise_low, "noise_high": args.noise_high,
        "noise": args.noise, "noise_bank": args.noise_bank})
    if params["kind"] not in KIND_LABEL:
        raise ValueError(f"unknown kind {params['kind']!r}")
    if int(params["n"]) < 1:
        raise ValueError("n must be >= 1")
    preset = get_preset(params["preset"])
    bank = _load_bank(params["noise_bank"])
    noise_range = ((float(params["noise_low"]), float(params["noise_high"]))
                   if params["noise"] else None)
    out = Path(params["out"])
    out.mkdir(parents=True, exist_ok=True)

    def worker(i: int) -> None:
        rec = build_record(params["kind"], int(params["seed"]) + i, preset,
                           noise_range, bank)
        write_record(rec, out / f"rec_{i:06d}.paus")

    jobs = [(f"rec_{i:06d}", i) for i in range(int(params["n"]))]
    failures = _run_batch(jobs, worker, int(params["threads"]))
    if len(failures) < len(jobs):
        write_manifest(out, seed=int(params["seed"]))
    write_resolved({"command": "generate", **params}, out)
    if failures:
        print(f"{len(failures)} of {len(jobs)} records failed",
              file=sys.stderr)
        return 1
    return 0


def cmd_simulate(args) -> int:
    """Re-realize records from their recorded seeds; with matching flags
    the output is byte-identical to the input dataset."""
    defaults = {"in": None, "out": None, "preset": None, "threads": 1,
                "noise_low": -80.0, "noise_high": -40.0, "noise": True,
                "noise_bank": None, "seed": 0}
    params = resolve_params(defaults, _file_values(args), {
        "in": args.in_path, "out": args.out, "preset": args.preset,
        "threads": args.threads, "noise_low": args.noise_low,
        "noise_high": args.noise_high, "noise": args.noise,
        "noise_bank": args.noise_bank, "seed": args.seed})
    if params["in"] is None or params["out"] is None:
        raise ValueError("simulate requires --in and --out")
    src = Path(params["in"])
    out = Path(params["out"])
    out.mkdir(parents=True, exist_ok=True)
    bank = _load_bank(params["noise_bank"])
    noise_range = ((float(params["noise_low"]), float(params["noise_high"]))
                   if params["noise"] else None)
    files = sorted(src.glob("*.paus")) if src.is_dir() else [src]

    def worker(path: Path) -> None:
        old = read_record(path)
        kind = KIND_BY_LABEL[old.meta["phantom_kind"]]
        preset = get_preset(params["preset"] or old.meta["preset"])
        rec = build_record(kind, int(old.meta["seed"]), preset,
                           noise_range, bank)
        write_record(rec, out / path.name)

    jobs = [(p.name, p) for p in files]
    failures = _run_batch(jobs, worker, int(params["threads"]))
    if len(failures) < len(jobs):
        write_manifest(out, seed=int(params["seed"]))
    write_resolved({"command": "simulate", **params}, out)
    return 1 if failures else 0


# -- reconstruction --------------------------------------------------------


def _pa_frame(record_path: Path) -> RFFrame:
    rec = read_record(record_path)
    return rec.pa_rf if rec.pa_rf is not None else rec.rf


def _parse_sos_source(spec: str, rf: RFFrame):
    """Return (sos_source, autofocus_result|None) for --sos forms
    uniform:<c>, map:<file>, autofocus."""
    if spec.startswith("uniform:"):
        return float(spec.split(":", 1)[1]), None
    if spec.startswith("map:"):
        return read_sos(spec.split(":", 1)[1]), None
    if spec == "autofocus":
        result = autofocus_sos(rf)
        return result.best_sos, result
    raise ValueError(f"--sos must be uniform:<c>, map:<file>, or autofocus; "
                     f"got {spec!r}")


def cmd_reconstruct(args) -> int:
    defaults = {"in": None, "out": None, "sos": "uniform:1540",
                "preset": "desk", "cfl": 0.3}
    params = resolve_params(defaults, _file_values(args), {
        "in": args.in_path, "out": args.out, "sos": args.sos,
        "preset": args.preset, "cfl": args.cfl})
    if params["in"] is None or params["out"] is None:
        raise ValueError("reconstruct requires --in and --out")
    preset = get_preset(params["preset"])
    rf = _pa_frame(Path(params["in"]))
    source, focus = _parse_sos_source(str(params["sos"]), rf)
    img = time_reversal(rf, ReconConfig(grid=preset.recon_grid,
                                        sos_source=source,
                                        cfl=float(params["cfl"])))
    out = Path(params["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pgm16(out, img)
    resolved = {"command": "reconstruct", **params}
    if focus is not None:
        write_sharpness_csv(out.parent / (out.stem + "_sharpness.csv"),
                            focus.candidates, focus.sharpness_curve)
        resolved["chosen_sos"] = focus.best_sos
        print(f"autofocus sound speed: {focus.best_sos} m/s")
    write_resolved(resolved, out)
    print(f"wrote {out}")
    return 0


def cmd_autofocus(args) -> int:
    defaults = {"in": None, "out": None, "low": 1400.0, "high": 1600.0,
                "step": 5.0}
    params = resolve_params(defaults, _file_values(args), {
        "in": args.in_path, "out": args.out, "low": args.low,
        "high": args.high, "step": args.step})
    if params["in"] is None or params["out"] is None:
        raise ValueError("autofocus requires --in and --out")
    rf = _pa_frame(Path(params["in"]))
    result = autofocus_sos(rf, (float(params["low"]), float(params["high"])),
                           float(params["step"]))
    out = Path(params["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_sharpness_csv(out, result.candidates, result.sharpness_curve)
    write_resolved({"command": "autofocus", **params,
                    "chosen_sos": result.best_sos}, out)
    print(f"autofocus sound speed: {result.best_sos} m/s")
    return 0


# -- evaluation -------------------------------------------------------------


def _region_rows(record: DatasetRecord, preset: Preset,
                 pred: SosMap) -> List[Tuple[str, float]]:
    """(region_label, rmse) rows; eval phantoms get per-region rows
    rebuilt deterministically from the recorded seed."""
    rows = []
    kind = record.meta["phantom_kind"]
    if kind in ("P1", "P2", "P3"):
        _, spec = sample_eval_phantom(PATTERN_BY_KIND[KIND_BY_LABEL[kind]],
                                      int(record.meta["seed"]),
                                      preset.sim_grid, preset.f0)
        masks = eval_region_masks(spec, preset.sos_grid)
        if kind == "P3":
            labeled = [("Background", masks[0])]
            if len(masks) > 1:
                labeled.append(("Inclusions", np.any(masks[1:], axis=0)))
        else:
            labeled = [(f"Layer {k + 1}", m) for k, m in enumerate(masks)]
        for label, mask in labeled:
            if mask.any():
                rows.append((label, rmse(pred, record.sos,
                                         RegionMask(mask, label))))
    rows.append(("Global", rmse(pred, record.sos)))
    return rows


def _recon_metrics(record: DatasetRecord, preset: Preset,
                   pred: SosMap, cfl: float) -> Dict[str, float]:
    """SSIM/FWHM/SNR of the reconstruction under the predicted map,
    referenced against the rasterized initial-pressure truth."""
    out: Dict[str, float] = {}
    if record.pa_rf is None or "absorbers" not in record.meta:
        return out
    grid = preset.recon_grid
    img = time_reversal(record.pa_rf, ReconConfig(
        grid=grid, sos_source=pred, cfl=cfl))
    coords = [tuple(c) for c in record.meta["absorbers"]]
    inside = []
    roi = np.zeros((grid.nx, grid.nz), bool)
    for (x, z) in coords:
        try:
            i, j = grid.world_to_grid((x, z))
        except PauslabError:
            continue
        inside.append((x, z))
        half = int(round(SSIM_ROI_HALF / grid.dx))
        roi[max(0, i - half):i + half + 1,
            max(0, j - half):j + half + 1] = True
    if inside:
        reference = make_initial_pressure(inside, grid)
        try:
            out["ssim"] = local_ssim(img, reference, RegionMask(roi, "roi"))
        except (EmptyMask, PauslabError):
            pass
        widths = []
        for c in inside:
            try:
                widths.append(lateral_fwhm(img, c))
            except (NoPeak, OpenProfile, PauslabError):
                continue
        if widths:
            out["fwhm_mm"] = float(np.mean(widths))
    try:
        out["snr_db"] = snr_db(img)
    except DegenerateClasses:
        pass
    return out


def cmd_evaluate(args) -> int:
    defaults = {"pred": None, "data": None, "out": "report.csv",
                "skip_recon": False, "cfl": 0.3}
    params = resolve_params(defaults, _file_values(args), {
        "pred": args.pred, "data": args.data, "out": args.out,
        "skip_recon": args.skip_recon, "cfl": args.cfl})
    if params["pred"] is None or params["data"] is None:
        raise ValueError("evaluate requires --pred and --data")
    data_dir, pred_dir = Path(params["data"]), Path(params["pred"])
    record_paths = sorted(data_dir.glob("*.paus"))
    if not record_paths:
        raise MissingPair(f"no records under {data_dir}")
    rows: List[Dict[str, object]] = []
    for path in record_paths:
        record_id = path.stem
        pred_path = pred_dir / path.name
        if not pred_path.exists():
            raise MissingPair(f"no prediction for record {record_id}")
        record = read_record(path)
        preset = get_preset(record.meta.get("preset", "desk"))
        pred = read_sos(pred_path)
        recon = {} if params["skip_recon"] else _recon_metrics(
            record, preset, pred, float(params["cfl"]))
        for label, err in _region_rows(record, preset, pred):
            row = {"record_id": record_id, "region_label": label,
                   "rmse": err, "ssim": "", "fwhm_mm": "", "snr_db": ""}
            if label == "Global":
                row.update(recon)
            rows.append(row)
        print(f"evaluated {record_id}", flush=True)

    labels = sorted({r["region_label"] for r in rows})
    for stat, fn in (("mean", np.mean), ("std", np.std)):
        for label in labels:
            agg = {"record_id": stat, "region_label": label}
            for col in ("rmse", "ssim", "fwhm_mm", "snr_db"):
                vals = [r[col] for r in rows
                        if r["region_label"] == label and r["record_id"]
                        not in ("mean", "std") and r[col] != ""]
                agg[col] = float(fn(vals)) if vals else ""
            rows.append(agg)

    out = Path(params["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v)
                        for k, v in row.items()})
    write_resolved({"command": "evaluate", **params}, out)
    print(f"wrote {out}")
    return 0


def cmd_noise_harvest(args) -> int:
    defaults = {"in": None, "out": "noise_bank.paus"}
    params = resolve_params(defaults, _file_values(args), {
        "in": args.in_path, "out": args.out})
    if params["in"] is None:
        raise ValueError("noise-harvest requires --in")
    src = Path(params["in"])
    files = sorted(src.glob("*.paus")) if src.is_dir() else [src]
    templates = []
    for path in files:
        rec = read_record(path)
        templates.append(harvest_system_noise(rec.rf))
    if not templates:
        raise MissingPair(f"no records under {src}")
    bank = np.stack(templates).astype(np.float32)
    out = Path(params["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tensors(out, {"noise_bank": bank},
                  meta={"n_templates": bank.shape[0],
                        "n_channels": bank.shape[1]})
    write_resolved({"command": "noise-harvest", **params}, out)
    print(f"wrote {out} ({bank.shape[0]} templates)")
    return 0


# -- argument plumbing -------------------------------------------------------


def _file_values(args) -> Dict[str, object]:
    return parse_config_file(args.config) if args.config else {}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pauslab",
        description="Simulation, reconstruction, and evaluation pipelines "
                    "for dual-modal photoacoustic/ultrasound imaging.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")

    p = sub.add_parser("generate", help="synthesize a dataset of records")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--kind", choices=sorted(KIND_LABEL))
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=("desk", "paper"))
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.add_argument("--noise-low", dest="noise_low", type=float)
    p.add_argument("--noise-high", dest="noise_high", type=float)
    p.add_argument("--no-noise", dest="noise", action="store_false",
                   default=None)
    p.add_argument("--noise-bank", dest="noise_bank")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("simulate",
                       help="re-realize records from their stored seeds")
    common(p)
    p.add_argument("--in", dest="in_path")
    p.add_argument("--out")
    p.add_argument("--preset", choices=("desk", "paper"))
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--noise-low", dest="noise_low", type=float)
    p.add_argument("--noise-high", dest="noise_high", type=float)
    p.add_argument("--no-noise", dest="noise", action="store_false",
                   default=None)
    p.add_argument("--noise-bank", dest="noise_bank")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("reconstruct",
                       help="time-reversal image from a record's PA frame")
    common(p)
    p.add_argument("--in", dest="in_path")
    p.add_argument("--out")
    p.add_argument("--sos", help="uniform:<c> | map:<file> | autofocus")
    p.add_argument("--preset", choices=("desk", "paper"))
    p.add_argument("--cfl", type=float)
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("autofocus", help="sharpness sweep over sound speeds")
    common(p)
    p.add_argument("--in", dest="in_path")
    p.add_argument("--out")
    p.add_argument("--low", type=float)
    p.add_argument("--high", type=float)
    p.add_argument("--step", type=float)
    p.set_defaults(fn=cmd_autofocus)

    p = sub.add_parser("evaluate",
                       help="metric report for predicted sound-speed maps")
    common(p)
    p.add_argument("--pred")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--skip-recon", dest="skip_recon", action="store_true",
                   default=None)
    p.add_argument("--cfl", type=float)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("noise-harvest",
                       help="build a system-noise bank from records")
    common(p)
    p.add_argument("--in", dest="in_path")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_noise_harvest)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (PauslabError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
