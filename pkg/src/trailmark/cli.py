"""Command-line driver: ``trailmark <synth|label|train|predict|eval>``.

Logs go to standard error; every result is written to files under the
output directory.  Exit codes: 0 success, 2 configuration error, 3 data
error, 4 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import _load_toml, camera_to_toml, load_config, parse_scene
from .dataset import load_manifest, save_manifest
from .errors import ConfigError, DataError, DimensionMismatch, EmptyDataset, TrailmarkError
from .evaluation import (decode_labels, intersection_metrics, region_histograms, region_scores,
                         roc_curve)
from .formats import (read_image, read_mask, read_ply, read_pnm, read_pose_log,
                      write_image, write_mask, write_normalization, write_occlusion_flags, write_pnm)
from .mask import trajectory_mask
from .model import load_checkpoint, resize, resize_mask, save_checkpoint, train
from .occlusion import build_index, filter_occlusions
from .risk import classify, error_map, normalize, risk_to_u8, select_threshold
from .synth import generate_dataset, write_dataset
from .trajectory import covers, project_trajectory

log = logging.getLogger("trailmark")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


def _out_dir(args, cfg) -> Path:
    out = args.out or cfg.output_dir
    if out is None:
        raise ConfigError("run.output_dir: no output directory (set it or pass --out)")
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _need(args, name):
    value = getattr(args, name)
    if value is None:
        raise ConfigError(f"--{name} is required for '{args.command}'")
    return value


def _pool_map(cfg, fn, items):
    items = list(items)
    if cfg.workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(min(cfg.workers, len(items))) as ex:
        return list(ex.map(fn, items))  # map keeps input order


def _write_lines(path: Path, lines) -> None:
    lines = list(lines)
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth(args, cfg) -> int:
    data = _load_toml(_need(args, "scene"))
    if args.seed is not None:
        data["seed"] = args.seed
    sc = parse_scene(data, cfg.camera)
    out = _out_dir(args, cfg)
    ds = generate_dataset(sc.scene, cfg.camera, cfg.window, cfg.wheels, sc.rays, sc.pose_rate,
                          workers=cfg.workers)
    manifest = write_dataset(ds, out, camera_to_toml(cfg.camera))
    log.info("wrote %d frames (%d labelable) to %s", len(ds.frames), len(ds.labelable), manifest)
    return EXIT_OK


def cmd_label(args, cfg) -> int:
    manifest = load_manifest(_need(args, "manifest"))
    out = _out_dir(args, cfg)
    if manifest.poses is None:
        raise DataError(f"{args.manifest}: labelling needs a pose log")
    poses = read_pose_log(manifest.resolve(manifest.poses))
    vehicle = None
    if manifest.vehicle_mask is not None:
        vehicle = read_mask(manifest.resolve(manifest.vehicle_mask))
    cam = cfg.camera
    (out / "masks").mkdir(exist_ok=True)

    def one(frame):
        if not covers(poses, frame.timestamp, cfg.window):
            return frame, None
        img = read_pnm(manifest.resolve(frame.image))
        if img.shape[:2] != (cam.height, cam.width):
            raise DimensionMismatch(f"frame {frame.frame_id}: image {img.shape[1]}x{img.shape[0]} "
                                    f"differs from camera {cam.width}x{cam.height}")
        cloud = read_ply(manifest.resolve(frame.cloud))
        traj = project_trajectory(frame.timestamp, poses, cfg.wheels, cam, cfg.window)
        traj = filter_occlusions(traj, build_index(cloud, cfg.occlusion), cfg.occlusion)
        mask = trajectory_mask(traj, cam.width, cam.height, vehicle)
        write_mask(out / "masks" / f"{frame.frame_id}.pgm", mask)
        return frame, traj

    flags, diag, skipped, labelled = [], [], [], set()
    for frame, traj in _pool_map(cfg, one, manifest.frames):
        if traj is None:
            log.info("frame %s: pose log does not cover the projection window, skipped", frame.frame_id)
            skipped.append(frame.frame_id)
            continue
        labelled.add(frame.frame_id)
        for i, (wheel, k, end, s) in enumerate(traj.wheel_points()):
            uv = s.inner if end == "inner" else s.outer
            vis = s.inner_in_frustum if end == "inner" else s.outer_in_frustum
            occ = s.inner_occluded if end == "inner" else s.outer_occluded
            if vis:
                flags.append((frame.frame_id, i, occ))
            diag.append(f"{frame.frame_id} {i} {wheel.value} {k} {end} {uv.u!r} {uv.v!r} "
                        f"{int(vis)} {int(occ)}")

    write_occlusion_flags(out / "occlusion.txt", flags)
    _write_lines(out / "trajectories.txt",
                 ["# frame sample_index wheel k endpoint u v in_frustum occluded"] + diag)
    _write_lines(out / "skipped.txt", skipped)
    rebased = manifest.rebased(out)
    rebased = replace(rebased, frames=tuple(
        f.with_extra("mask", f"masks/{f.frame_id}.pgm") if f.frame_id in labelled else f
        for f in rebased.frames))
    save_manifest(rebased, out / "manifest.txt")
    log.info("labelled %d frames, skipped %d", len(labelled), len(skipped))
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    manifest = load_manifest(_need(args, "manifest"))
    out = _out_dir(args, cfg)
    samples = []
    for f in manifest.frames:
        rel = f.extra("mask")
        if rel is None:
            continue
        samples.append((read_image(manifest.resolve(f.image)), read_mask(manifest.resolve(rel))))
    if not samples:
        raise EmptyDataset(f"{args.manifest}: no frame carries a mask (run 'label' first)")
    log.info("training %s on %d frames", cfg.model.architecture, len(samples))
    model = train(samples, cfg.model, cfg.train,
                  on_epoch=lambda e, tr, va: log.info("epoch %d train %.6g val %.6g", e, tr, va))
    save_checkpoint(model, out / "model.ckpt")
    _write_lines(out / "metrics.txt", ["# epoch train_loss val_loss"]
                 + [f"{e} {tr!r} {va!r}" for e, tr, va in model.history])
    log.info("best validation loss %.6g at epoch %d", model.best_val_loss, model.best_epoch)
    return EXIT_OK


def cmd_predict(args, cfg) -> int:
    model = load_checkpoint(_need(args, "checkpoint"))
    manifest = load_manifest(_need(args, "manifest"))
    out = _out_dir(args, cfg)
    w, h = model.train_config.input_size
    for sub in ("risk", "recon", "error"):
        (out / sub).mkdir(exist_ok=True)

    def one(frame):
        x = resize(read_image(manifest.resolve(frame.image)), w, h)
        recon = model.reconstruct(x)
        write_image(out / "recon" / f"{frame.frame_id}.ppm", recon)
        return error_map(x, recon)

    errors = _pool_map(cfg, one, manifest.frames)
    if errors:
        risk, consts = normalize(errors, cfg.eval.percentile)
        write_normalization(out / "normalization.txt", consts)
        top = max(float(e.max()) for e in errors)
        scale = 1.0 / top if top > 0 else 0.0
        for f, e, r in zip(manifest.frames, errors, risk):
            write_pnm(out / "risk" / f"{f.frame_id}.pgm", risk_to_u8(r))
            write_image(out / "error" / f"{f.frame_id}.pgm", e * scale)
    rebased = manifest.rebased(out)
    rebased = replace(rebased, frames=tuple(
        f.with_extra("risk", f"risk/{f.frame_id}.pgm").with_extra("recon", f"recon/{f.frame_id}.ppm")
        .with_extra("error", f"error/{f.frame_id}.pgm") for f in rebased.frames))
    save_manifest(rebased, out / "manifest.txt")
    log.info("predicted %d frames", len(errors))
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    manifest = load_manifest(_need(args, "manifest"))
    out = _out_dir(args, cfg)
    risks, labels = [], []
    for f in manifest.frames:
        r_rel, l_rel = f.extra("risk"), f.extra("labels")
        if r_rel is None or l_rel is None:
            log.info("frame %s: no risk map or labels, not evaluated", f.frame_id)
            continue
        risk = read_pnm(manifest.resolve(r_rel)).astype(float) / 255.0
        if risk.ndim != 2:
            raise DataError(f"{r_rel}: risk map must be single-channel")
        lab = decode_labels(read_pnm(manifest.resolve(l_rel)), cfg.eval.label_values)
        risks.append(risk)
        labels.append(resize_mask(lab, risk.shape[1], risk.shape[0]))
    if not risks:
        raise EmptyDataset(f"{args.manifest}: no frame carries both risk and labels")

    scores, positive = region_scores(risks, labels, cfg.eval.per_image)
    thr = select_threshold(scores, positive)
    roc = roc_curve(scores, positive)
    area = roc.area()
    high = [classify(r, thr) for r in risks]
    report = intersection_metrics(np.concatenate([h.ravel() for h in high]),
                                  np.concatenate([lab.ravel() for lab in labels]))
    hist = region_histograms(risks, labels, cfg.eval.bins)

    model_name, bottleneck, train_set = "-", "-", "-"
    if args.checkpoint is not None:
        m = load_checkpoint(args.checkpoint)
        model_name = m.model_config.architecture
        bottleneck = str(m.model_config.bottleneck)
        train_set = f"{m.train_frames} frames"
    fmt = lambda v: "n/a" if v is None else f"{v:.1f}"  # noqa: E731
    _write_lines(out / "report.txt", [
        "model | bottleneck | train set | ground low-risk % | vegetation high-risk % | AUROC",
        f"{model_name} | {bottleneck} | {train_set} | {fmt(report.ground_low_risk_percent)} | "
        f"{fmt(report.vegetation_high_risk_percent)} | {area:.3f}",
    ])
    _write_lines(out / "metrics.txt", [
        f"theta {thr.theta!r}", f"tpr {thr.tpr!r}", f"fpr {thr.fpr!r}", f"distance {thr.distance!r}",
        f"auroc {area!r}",
        f"ground_low_risk_percent {report.ground_low_risk_percent!r}",
        f"vegetation_high_risk_percent {report.vegetation_high_risk_percent!r}",
        f"evaluated_frames {len(risks)}",
    ])
    _write_lines(out / "roc.txt", ["# threshold fpr tpr"]
                 + [f"{t!r} {x!r} {y!r}" for t, x, y in zip(roc.thresholds.tolist(), roc.fpr.tolist(),
                                                            roc.tpr.tolist())])
    _write_lines(out / "histograms.txt", ["# bin_low bin_high ground vegetation"]
                 + [f"{lo!r} {hi!r} {g} {v}" for lo, hi, g, v in zip(
                     hist.edges[:-1].tolist(), hist.edges[1:].tolist(),
                     hist.counts["ground"].tolist(), hist.counts["vegetation"].tolist())])
    log.info("AUROC %.4f, theta* %.4f (TPR %.3f, FPR %.3f)", area, thr.theta, thr.tpr, thr.fpr)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "label": cmd_label, "train": cmd_train,
            "predict": cmd_predict, "eval": cmd_eval}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trailmark", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="run configuration (TOML)")
    p.add_argument("--manifest", help="dataset manifest")
    p.add_argument("--checkpoint", help="model checkpoint")
    p.add_argument("--scene", help="scene specification (synth only)")
    p.add_argument("--out", help="output directory (overrides run.output_dir)")
    p.add_argument("--seed", type=int, help="override every configured seed")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except TrailmarkError as exc:
        log.error("invariant violation: %s", exc)
        return EXIT_INTERNAL
    except Exception:  # noqa: BLE001 - anything unexpected is an internal failure
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
