"""Command line interface.

Exit codes: 0 on success, 2 for invalid inputs or arguments, 1 for
anything else.  Set ``KEYTRACK_LOG`` (DEBUG/INFO/WARNING/ERROR) to
control log verbosity.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import re
import sys
from pathlib import Path
from typing import Optional

import click
import numpy as np

from . import assembly, io, maps, metrics, simulate
from .keysort import KeySortTracker, TrackerConfig
from .skeleton import Pose, SkeletonSpec, is_valid_pose

log = logging.getLogger("keytrack")

MAP_FILE_RE = re.compile(r"frame_(\d+)\.(ktm|ktmt)$")


def _load_spec(path: Optional[str]) -> SkeletonSpec:
    if path is None:
        return io.default_skeleton()
    return io.load_skeleton(path)


@click.group()
@click.version_option(package_name="artifact", prog_name="keytrack")
def cli() -> None:
    """Keypoint map codec, skeleton assembly and multi-animal tracking."""


skeleton_option = click.option(
    "--skeleton",
    "skeleton_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Skeleton YAML config (default: bundled cattle skeleton).",
)


# ---------------------------------------------------------------------------
# encode


@cli.command()
@click.option("--detections", "detections_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Input pose JSONL.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False), help="Directory for per-frame map files.")
@skeleton_option
@click.option("--theta", default=maps.DEFAULT_THETA, show_default=True, help="Kernel width as a fraction of skeleton scale.")
@click.option("--cutoff", default=maps.DEFAULT_WEIGHT_CUTOFF, show_default=True, help="Association weight cutoff.")
@click.option("--extent", default=maps.DEFAULT_KERNEL_EXTENT, show_default=True, help="Kernel support radius in sigmas.")
@click.option("--text", is_flag=True, help="Write the text map format instead of binary.")
def encode(detections_path: str, out_dir: str, skeleton_path: Optional[str], theta: float, cutoff: float, extent: float, text: bool) -> None:
    """Encode poses into probability and association maps."""
    spec = _load_spec(skeleton_path)
    params = maps.EncoderParams(theta=theta, weight_cutoff=cutoff, kernel_extent=extent)
    header, frames, _ = io.load_detections(detections_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    suffix = "ktmt" if text else "ktm"
    for frame_index in sorted(frames):
        poses = [p for p in frames[frame_index] if is_valid_pose(spec, p)]
        skipped = len(frames[frame_index]) - len(poses)
        if skipped:
            log.warning("frame %d: skipped %d invalid poses", frame_index, skipped)
        stack = maps.encode(poses, spec, header.width, header.height, params)
        maps.save_maps(stack, str(out / f"frame_{frame_index:06d}.{suffix}"), text=text)
    click.echo(f"encoded {len(frames)} frames to {out_dir}")


# ---------------------------------------------------------------------------
# decode-assemble


def _map_files(maps_dir: str) -> list[tuple[int, Path]]:
    found = []
    for entry in sorted(Path(maps_dir).iterdir()):
        match = MAP_FILE_RE.search(entry.name)
        if match:
            found.append((int(match.group(1)), entry))
    if not found:
        raise ValueError(f"no frame_*.ktm or frame_*.ktmt files in {maps_dir}")
    return found


@cli.command("decode-assemble")
@click.option("--maps-dir", required=True, type=click.Path(exists=True, file_okay=False), help="Directory of per-frame map files.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Output pose JSONL.")
@skeleton_option
@click.option("--threshold", default=maps.DEFAULT_DETECT_THRESHOLD, show_default=True, help="Peak detection threshold on smoothed maps.")
@click.option("--nms-radius", default=maps.DEFAULT_NMS_RADIUS, show_default=True, help="Non-maximum suppression radius in pixels.")
@click.option("--gate-fraction", default=assembly.DEFAULT_GATE_FRACTION, show_default=True, help="Assembly gate as a fraction of the image diagonal.")
def decode_assemble(maps_dir: str, out_path: str, skeleton_path: Optional[str], threshold: float, nms_radius: float, gate_fraction: float) -> None:
    """Detect keypoints in map files and assemble skeletons."""
    spec = _load_spec(skeleton_path)
    header: Optional[io.StreamHeader] = None
    frames: dict[int, list[Pose]] = {}
    for frame_index, path in _map_files(maps_dir):
        stack = maps.load_maps(str(path))
        if header is None:
            header = io.StreamHeader(skeleton=spec.name, width=stack.width, height=stack.height)
        candidates = maps.decode_candidates(stack.prob, threshold, nms_radius)
        skeletons = assembly.assemble(candidates, stack, spec, gate_fraction=gate_fraction)
        frames[frame_index] = [
            Pose(coords=dict(s.coords), frame_index=frame_index) for s in skeletons
        ]
    assert header is not None
    io.save_detections(out_path, header, frames)
    total = sum(len(v) for v in frames.values())
    click.echo(f"assembled {total} skeletons over {len(frames)} frames")


# ---------------------------------------------------------------------------
# track


@cli.command()
@click.option("--detections", "detections_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Input pose JSONL.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Output track JSONL.")
@skeleton_option
@click.option("--r-star", default=1.0, show_default=True, help="Measurement noise scale per coordinate.")
@click.option("--gate", "gate_px", default=25.0, show_default=True, help="Association gate in original-image pixels.")
@click.option("--coord-scale", default=1.0, show_default=True, help="Working-to-original image coordinate factor.")
@click.option("--max-missed", default=3, show_default=True, help="Consecutive missed frames before termination.")
@click.option("--maturity-age", default=3, show_default=True, help="Matched frames before a tracklet survives a miss.")
@click.option("--sign-window", default=8, show_default=True, help="Innovation sign history length.")
def track(detections_path: str, out_path: str, skeleton_path: Optional[str], r_star: float, gate_px: float, coord_scale: float, max_missed: int, maturity_age: int, sign_window: int) -> None:
    """Track assembled skeletons across frames."""
    spec = _load_spec(skeleton_path)
    header, frames, _ = io.load_detections(detections_path)
    config = TrackerConfig(
        gate_px=gate_px,
        coord_scale=coord_scale,
        max_missed=max_missed,
        maturity_age=maturity_age,
        sign_window=sign_window,
    )
    tracker = KeySortTracker(spec, np.full(len(spec.categories), r_star), config)
    outputs = [tracker.step(frames[idx], idx) for idx in sorted(frames)]
    io.save_tracks(out_path, header, outputs)
    emitted = sum(len(out.records) for out in outputs)
    click.echo(f"tracked {len(frames)} frames, {emitted} tracklet records")


# ---------------------------------------------------------------------------
# evaluate


def _aggregate_pr(totals: dict[str, list[float]], report: metrics.PRReport) -> None:
    for cat, pr in report.per_category.items():
        bucket = totals.setdefault(cat, [0.0, 0.0, 0.0])
        bucket[0] += pr.tp
        bucket[1] += pr.fp
        bucket[2] += pr.fn


def _pr_section(totals: dict[str, list[float]]) -> dict:
    def ratio(num: float, denom: float) -> Optional[float]:
        return num / denom if denom > 0 else None

    section = {}
    grand = [0.0, 0.0, 0.0]
    for cat, (tp, fp, fn) in sorted(totals.items()):
        section[cat] = {"tp": tp, "fp": fp, "fn": fn, "precision": ratio(tp, tp + fp), "recall": ratio(tp, tp + fn)}
        grand[0] += tp
        grand[1] += fp
        grand[2] += fn
    section["overall"] = {
        "tp": grand[0],
        "fp": grand[1],
        "fn": grand[2],
        "precision": ratio(grand[0], grand[0] + grand[1]),
        "recall": ratio(grand[0], grand[0] + grand[2]),
    }
    return section


@cli.command()
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Ground-truth pose JSONL.")
@click.option("--poses", "poses_path", default=None, type=click.Path(exists=True, dir_okay=False), help="Predicted pose JSONL.")
@click.option("--tracks", "tracks_path", default=None, type=click.Path(exists=True, dir_okay=False), help="Track JSONL (scores posteriors, adds smoothness).")
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False), help="Write the JSON report here instead of stdout.")
@skeleton_option
@click.option("--pair-gate", default=metrics.DEFAULT_PAIR_GATE, show_default=True, help="Skeleton pairing gate in original-image pixels.")
@click.option("--coord-scale", default=1.0, show_default=True, help="Working-to-original image coordinate factor.")
@click.option("--truth-maps", default=None, type=click.Path(exists=True, file_okay=False), help="Ground-truth map directory for detection PR.")
@click.option("--pred-maps", default=None, type=click.Path(exists=True, file_okay=False), help="Predicted map directory for detection PR.")
@click.option("--prob-cutoff", default=metrics.DEFAULT_PROB_CUTOFF, show_default=True, help="Probability cutoff for detection PR.")
def evaluate(truth_path: str, poses_path: Optional[str], tracks_path: Optional[str], out_path: Optional[str], skeleton_path: Optional[str], pair_gate: float, coord_scale: float, truth_maps: Optional[str], pred_maps: Optional[str], prob_cutoff: float) -> None:
    """Score predictions against ground truth."""
    if (poses_path is None) == (tracks_path is None):
        raise ValueError("provide exactly one of --poses or --tracks")
    if (truth_maps is None) != (pred_maps is None):
        raise ValueError("--truth-maps and --pred-maps go together")
    spec = _load_spec(skeleton_path)
    _, gt_frames, _ = io.load_detections(truth_path)

    if poses_path is not None:
        _, pred_frames, _ = io.load_detections(poses_path)
        report, _ = metrics.evaluate_poses(gt_frames, pred_frames, spec, pair_gate, coord_scale)
    else:
        _, outputs = io.load_tracks(tracks_path)
        report, _ = metrics.evaluate_tracks(gt_frames, outputs, spec, pair_gate, coord_scale)
    result = report.to_dict()

    if truth_maps is not None:
        totals: dict[str, list[float]] = {}
        pred_by_index = dict(_map_files(pred_maps))
        for frame_index, truth_file in _map_files(truth_maps):
            if frame_index not in pred_by_index:
                raise ValueError(f"no predicted maps for frame {frame_index}")
            gt_stack = maps.load_maps(str(truth_file))
            pred_stack = maps.load_maps(str(pred_by_index[frame_index]))
            candidates = maps.decode_candidates(pred_stack.prob)
            frame_pr = metrics.precision_recall(
                gt_frames.get(frame_index, []), candidates, gt_stack.prob, pred_stack.prob, prob_cutoff
            )
            _aggregate_pr(totals, frame_pr)
        result["precision_recall"] = _pr_section(totals)

    text = json.dumps(result, indent=2)
    if out_path is None:
        click.echo(text)
    else:
        Path(out_path).write_text(text + "\n", encoding="utf-8")
        click.echo(f"wrote report to {out_path}")


# ---------------------------------------------------------------------------
# simulate


@cli.command("simulate")
@click.option("--truth-out", default=None, type=click.Path(dir_okay=False), help="Write ground-truth pose JSONL here.")
@click.option("--detections-out", default=None, type=click.Path(dir_okay=False), help="Write corrupted detections JSONL here.")
@click.option("--scenario", "scenario_path", default=None, type=click.Path(exists=True, dir_okay=False), help="Scenario YAML config.")
@skeleton_option
@click.option("--seed", default=None, type=int, help="Override the scenario seed.")
@click.option("--animals", default=None, type=int, help="Override the animal count.")
@click.option("--frames", default=None, type=int, help="Replace the schedule with one stationary segment this long.")
@click.option("--noise", default=None, type=float, help="Override detection noise sigma in pixels.")
@click.option("--dropout", default=None, type=float, help="Override keypoint dropout probability.")
def simulate_cmd(truth_out: Optional[str], detections_out: Optional[str], scenario_path: Optional[str], skeleton_path: Optional[str], seed: Optional[int], animals: Optional[int], frames: Optional[int], noise: Optional[float], dropout: Optional[float]) -> None:
    """Generate synthetic ground truth and optional noisy detections."""
    if truth_out is None and detections_out is None:
        raise ValueError("provide --truth-out and/or --detections-out")
    spec = _load_spec(skeleton_path)
    config = io.load_scenario(scenario_path) if scenario_path else simulate.ScenarioConfig()
    if seed is not None:
        config.seed = seed
    if animals is not None:
        config.n_animals = animals
    if frames is not None:
        config.regimes = (simulate.RegimeSegment("stationary", frames),)
    if noise is not None:
        config.detection_noise = noise
    if dropout is not None:
        config.dropout = dropout

    truth = simulate.generate(spec, config)
    header = io.StreamHeader(skeleton=spec.name, width=config.width, height=config.height)
    if truth_out is not None:
        io.save_detections(
            truth_out,
            header,
            truth.poses_by_frame(),
            regimes={f.frame_index: f.regime for f in truth.frames},
        )
        click.echo(f"wrote {len(truth.frames)} ground-truth frames to {truth_out}")
    if detections_out is not None:
        detections = simulate.corrupt(truth, spec, config)
        io.save_detections(detections_out, header, detections)
        kept = sum(len(v) for v in detections.values())
        click.echo(f"wrote {kept} detected poses to {detections_out}")


# ---------------------------------------------------------------------------
# kf-demo


@cli.command("kf-demo")
@click.option("--mode", type=click.Choice(simulate.KF_DEMO_MODES), default="adaptive", show_default=True)
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False), help="Write per-step CSV here.")
@click.option("--steps", default=500, show_default=True)
@click.option("--seed", default=5, show_default=True)
@click.option("--q-var", default=1e-3, show_default=True, help="Process noise variance the filter assumes.")
@click.option("--q-jump", default=1e5, show_default=True, help="Process noise multiplier after the switch.")
@click.option("--r-var", default=1.0, show_default=True, help="Measurement noise variance.")
@click.option("--switch-at", default=None, type=int, help="Switch step (default: halfway).")
def kf_demo(mode: str, out_path: Optional[str], steps: int, seed: int, q_var: float, q_jump: float, r_var: float, switch_at: Optional[int]) -> None:
    """Run the regime-switch filtering demonstration."""
    result = simulate.regime_switch_demo(
        mode=mode, steps=steps, seed=seed, q_var=q_var, q_jump=q_jump, r_var=r_var, switch_at=switch_at
    )
    pre = result.rmse(0, result.switch_at)
    post = result.rmse(result.switch_at, steps)
    click.echo(f"mode={mode} pre-switch RMSE={pre:.4f} post-switch RMSE={post:.4f}")
    if out_path is not None:
        with open(out_path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["step", "truth_pos", "truth_vel", "z", "prior_pos", "posterior_pos", "alpha", "gamma"])
            for i in range(steps):
                writer.writerow(
                    [
                        i,
                        f"{result.truth_pos[i]:.6f}",
                        f"{result.truth_vel[i]:.6f}",
                        f"{result.z[i]:.6f}",
                        f"{result.prior_pos[i]:.6f}",
                        f"{result.posterior_pos[i]:.6f}",
                        f"{result.alpha[i]:.6f}",
                        f"{result.gamma[i]:.6f}",
                    ]
                )
        click.echo(f"wrote {steps} steps to {out_path}")


# ---------------------------------------------------------------------------


def main() -> None:
    logging.basicConfig(level=os.environ.get("KEYTRACK_LOG", "WARNING").upper())
    try:
        cli.main(standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except click.Abort:
        sys.exit(1)
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except Exception as exc:  # pragma: no cover - defensive
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
