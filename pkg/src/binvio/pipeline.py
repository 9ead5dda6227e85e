"""End-to-end pipeline: dataset frames in, pose stream out.

Per frame: obtain binary maps (directly, or through the emulator for
grayscale datasets), feather the edges, advance the KLT track table, then
run one filter cycle fed with the IMU slice covering the frame interval.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as dataio
from .config import PipelineConfig
from .emulator import GrayFrame, detect_corners, detect_edges, inject_analog_noise
from .evaluate import TrajectorySeries
from .geometry import UnitQuaternion
from .imu import ImuSample, NavState, NoiseParams
from .msckf import FilterState, FrameResult, process_frame
from .simgen import Dataset
from .tracker import (
    FeatureSource,
    TrackTable,
    binary_to_intensity,
    corners_from_points,
    dump_tracks_csv,
    feather,
    shi_tomasi_on_edges,
    track_frame,
)


@dataclass
class PipelineResult:
    pose_rows: np.ndarray
    diagnostics: np.ndarray        # t, trace, pos_sigma, rot_sigma, live, slam, msckf
    checks: "object"
    elapsed_seconds: float
    table: TrackTable = field(repr=False, default=None)

    def trajectory(self) -> TrajectorySeries:
        return TrajectorySeries.from_rows(self.pose_rows)

    def mean_live_tracks(self) -> float:
        return float(self.diagnostics[:, 4].mean())


class _ImuSlicer:
    """Serves interpolated-boundary sample slices per frame interval."""

    def __init__(self, samples: list[ImuSample]):
        if len(samples) < 2:
            raise ValueError("need at least two IMU samples")
        self.samples = samples
        self.times = np.array([s.t for s in samples])

    def _interp(self, t: float) -> ImuSample:
        i = int(np.clip(np.searchsorted(self.times, t) - 1, 0, len(self.samples) - 2))
        s0, s1 = self.samples[i], self.samples[i + 1]
        if s1.t == s0.t:
            return ImuSample(t, s0.omega, s0.accel)
        a = (t - s0.t) / (s1.t - s0.t)
        a = float(np.clip(a, 0.0, 1.0))
        return ImuSample(
            t, (1 - a) * s0.omega + a * s1.omega, (1 - a) * s0.accel + a * s1.accel
        )

    def slice(self, t0: float, t1: float) -> list[ImuSample]:
        if t1 <= t0:
            return []
        lo = int(np.searchsorted(self.times, t0, side="right"))
        hi = int(np.searchsorted(self.times, t1, side="left"))
        inner = self.samples[lo:hi]
        return [self._interp(t0)] + inner + [self._interp(t1)]


def initial_state_from_gt(dataset: Dataset, config: PipelineConfig) -> FilterState:
    row = dataset.gt[0]
    nav = NavState(
        UnitQuaternion(row[4:8]),
        row[1:4].copy(),
        row[8:11].copy() if dataset.gt.shape[1] >= 11 else np.zeros(3),
    )
    return FilterState(nav, dataset.calib, config.filter_config())


def dataset_noise_params(dataset: Dataset, config: PipelineConfig) -> NoiseParams:
    if config.noise.from_manifest and "gyro_noise" in dataset.meta:
        m = dataset.meta
        return NoiseParams(
            float(m["gyro_noise"]), float(m["accel_noise"]),
            float(m["gyro_walk"]), float(m["accel_walk"]), float(m["gravity"]),
        )
    n = config.noise
    return NoiseParams(n.gyro_noise, n.accel_noise, n.gyro_walk, n.accel_walk, n.gravity)


def run_pipeline(
    dataset: Dataset,
    config: PipelineConfig | None = None,
    pose_path=None,
    diagnostics_path=None,
    tracks_path=None,
) -> PipelineResult:
    config = config if config is not None else PipelineConfig()
    tracker_cfg = config.tracker_config()
    noise = dataset_noise_params(dataset, config)

    state = initial_state_from_gt(dataset, config)
    slicer = _ImuSlicer(dataset.imu)
    table = TrackTable()

    prev_feather = None
    prev_t = 0.0
    pose_rows = []
    diag_rows = []
    started = time.perf_counter()

    for k, (t, payload) in enumerate(dataset.iter_frames()):
        if isinstance(payload, GrayFrame):
            edges = detect_edges(payload, config.emulator.edge_threshold)
            corners = detect_corners(
                payload, config.emulator.fast_threshold, tracker_cfg.max_tracks
            )
            if config.emulator.noise_flip_rate > 0.0:
                base = config.run.seed * 1_000_003 + k * 2
                corners = inject_analog_noise(
                    corners, config.emulator.noise_flip_rate, base
                )
                edges = inject_analog_noise(
                    edges, config.emulator.noise_flip_rate, base + 1
                )
        else:
            corners, edges = payload
            if config.emulator.noise_flip_rate > 0.0:
                base = config.run.seed * 1_000_003 + k * 2
                corners = inject_analog_noise(
                    corners, config.emulator.noise_flip_rate, base
                )
                edges = inject_analog_noise(
                    edges, config.emulator.noise_flip_rate, base + 1
                )

        if tracker_cfg.feathering_enabled:
            feathered = feather(edges, tracker_cfg.sigma_e)
        else:
            feathered = binary_to_intensity(edges)

        if tracker_cfg.feature_source is FeatureSource.SHI_TOMASI_ON_EDGES:
            pts = shi_tomasi_on_edges(feathered, tracker_cfg.max_tracks)
            corners = corners_from_points(pts, t)

        track_frame(table, prev_feather, feathered, corners, tracker_cfg, k)

        segment = slicer.slice(prev_t, t) if k > 0 else []
        result = process_frame(state, table, segment, noise, k, t)

        pose_rows.append(
            [t, *result.position, *result.orientation.xyzw]
        )
        diag_rows.append(
            [t, result.trace, result.pos_sigma, result.rot_sigma,
             result.live_tracks, result.slam_count, result.msckf_used]
        )
        prev_feather = feathered
        prev_t = t

    elapsed = time.perf_counter() - started
    pose_rows = np.array(pose_rows)
    diag_rows = np.array(diag_rows)

    if pose_path is not None:
        dataio.write_pose_csv(pose_rows, pose_path)
    if diagnostics_path is not None:
        with open(diagnostics_path, "w") as f:
            f.write("t,trace,pos_sigma,rot_sigma,live_tracks,slam_in_state,msckf_used\n")
            for row in diag_rows:
                f.write(
                    f"{row[0]:.9f},{row[1]:.9f},{row[2]:.9f},{row[3]:.9f},"
                    f"{int(row[4])},{int(row[5])},{int(row[6])}\n"
                )
    if tracks_path is not None:
        dump_tracks_csv(table, tracks_path)

    return PipelineResult(pose_rows, diag_rows, state.checks, elapsed, table)
