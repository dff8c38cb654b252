"""Command-line front end: validate, simulate, process, export.

Stages communicate through files in the output directory (captures.cfmc,
matrix.cfmm, summary.csv, per-UE heatmaps and annotation CSVs) plus a
manifest recording the semantic config hash and seed, so any stage can be
re-run or handed captures produced elsewhere. Every stage writes the same
bytes for the same config regardless of worker count: workers compute
disjoint capture ranges whose content is seed-determined, and the parent
does all file writes.

Exit codes: 0 success, 1 validation error, 2 missing/unreadable files,
3 binary format mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import multiprocessing as mp
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import apld as ap
from . import formats as fm
from . import pipeline as pl
from . import sounder as sd
from .config import ConfigError, RunConfig, load_config, resolve_scene_path, semantic_hash
from .scene import SceneError, classify_link_matrix, load_scene, sample_ap_pose_arrays, validate_scene

CAPTURES_NAME = "captures.cfmc"
MATRIX_NAME = "matrix.cfmm"
SUMMARY_NAME = "summary.csv"
MANIFEST_NAME = "manifest.json"

# Per capture-UE wall-clock cost of synthesis plus processing, measured on
# one desktop core; only used for the validate-stage runtime estimate.
_EST_SECONDS_PER_CAPTURE_UE = 6e-3

_WORKER_PLAN = None
_WORKER_SOURCE = None
_WORKER_PARAMS = None


def _out_dir(cfg: RunConfig, flag_out: str | None) -> Path:
    if flag_out:
        return Path(flag_out)
    root = os.environ.get("CFMM_OUT_ROOT")
    if root:
        return Path(root) / cfg.output_dir
    return Path(cfg.output_dir)


def _n_workers(cfg: RunConfig, flag: int | None) -> int:
    w = flag if flag is not None else cfg.workers
    return os.cpu_count() or 1 if w == 0 else w


def _chunks(m_total: int, size: int) -> list[tuple[int, int]]:
    return [(a, min(a + size, m_total)) for a in range(0, m_total, size)]


def _update_manifest(out: Path, cfg: RunConfig, stage: str, record: dict) -> None:
    path = out / MANIFEST_NAME
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest["config_hash"] = semantic_hash(cfg)
    manifest["seed"] = cfg.seed
    manifest["scene"] = cfg.scene
    manifest.setdefault("stages", {})[stage] = record
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_validated_scene(cfg: RunConfig):
    path = resolve_scene_path(cfg.scene)
    if not path.exists():
        raise FileNotFoundError(f"scene file not found: {path}")
    scene = load_scene(path)
    validate_scene(scene)
    return scene


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    scene = _load_validated_scene(cfg)
    positions, _, _ = sample_ap_pose_arrays(scene.trajectory)
    n_poses = positions.shape[0]
    n_ues = scene.ue_sites[0].positions_m.shape[0]
    est_s = n_poses * n_ues * _EST_SECONDS_PER_CAPTURE_UE
    print(f"valid, {n_poses} poses")
    print(f"sites: {len(scene.ue_sites)}, UEs per site: {n_ues}")
    print(f"estimated single-core runtime: {est_s / 60:.1f} min")
    print(f"config hash: {semantic_hash(cfg)}")
    return 0


def _sim_range(span: tuple[int, int]) -> tuple[int, np.ndarray]:
    a, b = span
    return a, sd.synthesize_chunk(_WORKER_PLAN, a, b)


def cmd_simulate(args) -> int:
    cfg = _effective_config(args)
    scene = _load_validated_scene(cfg)
    out = _out_dir(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    plan = sd.plan_campaign(scene, cfg.waveform, cfg.impairments, cfg.seed,
                            site=cfg.site)
    link = classify_link_matrix(scene, plan.positions, plan.ue_positions)
    writer = fm.CaptureWriter(out / CAPTURES_NAME, plan, link)
    spans = _chunks(plan.n_captures, args.chunk_size)
    workers = min(_n_workers(cfg, args.workers), len(spans))
    print(f"simulate: {plan.n_captures} captures x {plan.n_ues} UEs "
          f"({len(spans)} chunks, {workers} workers)")
    if workers <= 1:
        for span in spans:
            writer.write_chunk(span[0], sd.synthesize_chunk(plan, *span))
    else:
        global _WORKER_PLAN
        _WORKER_PLAN = plan
        ctx = mp.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            for fut in as_completed(pool.submit(_sim_range, s) for s in spans):
                a, spectra = fut.result()
                writer.write_chunk(a, spectra)
        _WORKER_PLAN = None
    _update_manifest(out, cfg, "simulate", {
        "captures": CAPTURES_NAME,
        "n_captures": plan.n_captures,
        "n_ues": plan.n_ues,
    })
    print(f"simulate: wrote {out / CAPTURES_NAME}")
    return 0


def _proc_range(span: tuple[int, int]) -> tuple:
    a, b = span
    return pl.process_chunk(_WORKER_SOURCE, _WORKER_PARAMS, a, b)


def _summary_rows(a: int, chunk: tuple, bin_width_s: float) -> list[list]:
    _, b, values, mask, noise_db, theta_db = chunk
    rows = []
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            surviving = int(mask[i, j].sum())
            if surviving:
                q = int(values[i, j].argmax())
                delay = f"{q * bin_width_s:.12e}"
                power = f"{10 * np.log10(values[i, j, q]):.4f}"
            else:
                delay, power = "nan", "nan"
            rows.append([a + i, j, f"{noise_db[i, j]:.4f}", f"{theta_db[i, j]:.4f}",
                         delay, power, surviving])
    return rows


def cmd_process(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(cfg, args.out)
    captures = Path(args.captures) if args.captures else out / CAPTURES_NAME
    if not captures.exists():
        raise FileNotFoundError(
            f"captures file not found: {captures} (run simulate first)")
    source = fm.open_captures(captures)
    params = cfg.pipeline
    params.validate()
    f = params.pad_factor
    native_bin_s = 1.0 / (source.n_subcarriers * source.subcarrier_spacing_hz)
    out.mkdir(parents=True, exist_ok=True)
    writer = fm.MatrixWriter(out / MATRIX_NAME, source.n_captures, source.n_ues,
                             params.gate_native_bins * f, native_bin_s / f, f)
    spans = _chunks(source.n_captures, args.chunk_size)
    workers = min(_n_workers(cfg, args.workers), len(spans))
    print(f"process: {source.n_captures} captures x {source.n_ues} UEs "
          f"({len(spans)} chunks, {workers} workers)")
    all_rows: list[list] = []
    if workers <= 1:
        for a, _b in spans:
            chunk = pl.process_chunk(source, params, a, _b)
            writer.write_chunk(a, chunk[2], chunk[3])
            all_rows.extend(_summary_rows(a, chunk, native_bin_s / f))
    else:
        global _WORKER_SOURCE, _WORKER_PARAMS
        _WORKER_SOURCE, _WORKER_PARAMS = source, params
        ctx = mp.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            for fut in as_completed(pool.submit(_proc_range, s) for s in spans):
                chunk = fut.result()
                writer.write_chunk(chunk[0], chunk[2], chunk[3])
                all_rows.extend(_summary_rows(chunk[0], chunk, native_bin_s / f))
        _WORKER_SOURCE = _WORKER_PARAMS = None
    all_rows.sort(key=lambda r: (r[0], r[1]))
    with open(out / SUMMARY_NAME, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["capture_index", "ue", "noise_db", "threshold_db",
                    "peak_delay_s", "peak_power_db", "surviving_bins"])
        w.writerows(all_rows)
    _update_manifest(out, cfg, "process", {
        "matrix": MATRIX_NAME,
        "summary": SUMMARY_NAME,
        "captures": str(captures),
    })
    print(f"process: wrote {out / MATRIX_NAME} and {out / SUMMARY_NAME}")
    return 0


def _threshold_table(summary_path: Path, m: int, u: int) -> np.ndarray:
    theta = np.full((m, u), np.nan)
    with open(summary_path) as fh:
        for row in csv.DictReader(fh):
            theta[int(row["capture_index"]), int(row["ue"])] = float(row["threshold_db"])
    return theta


def cmd_export(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(cfg, args.out)
    matrix_path = out / MATRIX_NAME
    captures_path = Path(args.captures) if args.captures else out / CAPTURES_NAME
    for p in (matrix_path, captures_path):
        if not p.exists():
            raise FileNotFoundError(f"missing stage input: {p}")
    matrix = fm.read_matrix(matrix_path)
    source = fm.open_captures(captures_path)
    summary = out / SUMMARY_NAME
    if summary.exists():
        matrix.threshold_db = _threshold_table(summary, matrix.n_captures,
                                               matrix.n_ues)
    heatmaps, annotations = [], []
    for j in range(matrix.n_ues):
        one = ap.assemble_apld(matrix, source, j)
        pgm = out / f"apld_ue{j}.pgm"
        csv_path = out / f"annotations_ue{j}.csv"
        ap.export_heatmap(one, pgm)
        ap.write_annotations(one, csv_path)
        heatmaps.append(pgm.name)
        annotations.append(csv_path.name)
    _update_manifest(out, cfg, "export", {
        "heatmaps": heatmaps,
        "annotations": annotations,
    })
    print(f"export: wrote {len(heatmaps)} heatmaps to {out}")
    return 0


def _effective_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    overrides = {}
    for flag, name in (("beta", "kaiser_beta"), ("pad", "pad_factor"),
                       ("ssa", "ssa_window"), ("delta_n", "delta_n_db"),
                       ("gate", "gate_native_bins"), ("guard", "guard_native_bins")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    if overrides:
        cfg = replace(cfg, pipeline=replace(cfg.pipeline, **overrides))
    cfg.validate()
    return cfg


def _add_common(p: argparse.ArgumentParser, pipeline_flags: bool) -> None:
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out", help="output directory (default: config output_dir, "
                   "under $CFMM_OUT_ROOT if set)")
    p.add_argument("--workers", type=int, help="parallel workers (0 = all cores)")
    p.add_argument("--chunk-size", dest="chunk_size", type=int, default=128,
                   help="captures per work unit (output is identical for any value)")
    if pipeline_flags:
        p.add_argument("--beta", type=float, help="Kaiser-Bessel window parameter")
        p.add_argument("--pad", type=int, help="zero-pad oversampling factor")
        p.add_argument("--ssa", type=int, help="small-scale average window (captures)")
        p.add_argument("--delta-n", dest="delta_n", type=float,
                       help="threshold offset above noise, dB")
        p.add_argument("--gate", type=int, help="delay gate, native bins")
        p.add_argument("--guard", type=int, help="pre-cursor guard, native bins")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfmm",
        description="Switched-array channel-sounding simulator and PDP toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="check a config and scene, print a report")
    v.add_argument("--config", required=True)
    s = sub.add_parser("simulate", help="synthesize the capture file")
    _add_common(s, pipeline_flags=False)
    s.add_argument("--seed", type=int, help="campaign seed override")
    p = sub.add_parser("process", help="run the PDP pipeline over captures")
    _add_common(p, pipeline_flags=True)
    p.add_argument("--captures", help="captures file (default: <out>/captures.cfmc)")
    e = sub.add_parser("export", help="write per-UE heatmaps and annotations")
    _add_common(e, pipeline_flags=False)
    e.add_argument("--captures", help="captures file (default: <out>/captures.cfmc)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "validate": cmd_validate,
        "simulate": cmd_simulate,
        "process": cmd_process,
        "export": cmd_export,
    }[args.command]
    try:
        return handler(args)
    except (ConfigError, SceneError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except fm.FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
