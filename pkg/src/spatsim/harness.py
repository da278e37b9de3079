"""Sweep driver: evaluates every (method, speaker count, pose) condition of
the parameter grid against the free-field reference, applies the error
criteria, extracts threshold contours, and writes CSV/report outputs."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import traceback
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import yaml

from .binsim import (ReceiverBank, RenderOutput, VirtualSource,
                     render_reference, render_scene_stems, render_source,
                     select_channels)
from .geometry import ListenerPose, Position2D, build_array
from .haalgo import (AdaptiveDifferentialMic, CoherenceNoiseReduction,
                     MvdrBeamformer, MvdrCoreBeamformer,
                     SingleChannelNoiseReduction, design_mvdr)
from .hrir import (CHANNELS_BEAMFORMER, CHANNELS_LOCALIZATION,
                   DEFAULT_HEAD_RADIUS, HrirSet, load_hrir_set,
                   synth_sphere_hrir)
from .localization import (PLE_TARGET_AZIMUTHS, build_cue_lookup, localize,
                           _rms_ignore_nan)
from .metrics import (BandGrid, NOMINAL_INPUT_SNRS, beam_error, beam_pattern,
                      make_third_octave_grid, snr_error, snr_improvement,
                      spectral_distance)
from .panner import ReproductionMethod, aliasing_limit
from .signals import make_default_scene, speech_shaped_noise

PAPER_SPEAKER_COUNTS = (4, 6, 8, 12, 18, 24, 36, 72)
DESK_SPEAKER_COUNTS = (4, 8, 12, 24)
POSE_OFFSETS = (0.0, 0.1, 0.5)
ALGORITHM_NAMES = ("beamformer", "adm", "coherence_nr", "single_nr")
METRIC_NAMES = ("beam", "snr", "ple", "spectral")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SweepConfig:
    speaker_counts: tuple = PAPER_SPEAKER_COUNTS
    pose_offsets: tuple = POSE_OFFSETS
    methods: tuple = ("nsp", "vbap", "hoa")
    algorithms: tuple = ALGORITHM_NAMES
    metrics: tuple = METRIC_NAMES
    array_radius: float = 3.0
    sample_rate: int = 48000
    scene_duration: float = 8.0
    n_noise_sources: int = 20
    input_snrs: tuple = NOMINAL_INPUT_SNRS
    pattern_probe_duration: float = 1.0
    band_min: float = 100.0
    band_max: float = 8000.0
    beam_error_normalized: bool = False
    seed: int = 20150842
    hrir_source: str = "sphere"         # "sphere" or a saved-set directory
    head_radius: float = DEFAULT_HEAD_RADIUS
    output_dir: str = "sweep_out"

    @classmethod
    def desk_scale(cls, **overrides) -> "SweepConfig":
        """Reduced grid that completes in minutes on a workstation."""
        base = dict(speaker_counts=DESK_SPEAKER_COUNTS, scene_duration=2.0)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_yaml(cls, path) -> "SweepConfig":
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        preset = data.pop("preset", None)
        known = {k: v for k, v in data.items() if k in cls.__annotations__}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("speaker_counts", "pose_offsets", "methods", "algorithms",
                    "metrics", "input_snrs"):
            if key in known:
                known[key] = tuple(known[key])
        if preset == "desk":
            return cls.desk_scale(**known)
        if preset not in (None, "full"):
            raise ValueError(f"unknown preset {preset!r}")
        return cls(**known)

    def to_yaml(self) -> str:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return yaml.safe_dump(data, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_yaml().encode()).hexdigest()[:16]

    def band_grid(self) -> BandGrid:
        return make_third_octave_grid(self.band_min, self.band_max)

    def poses(self) -> list:
        return [ListenerPose.center() if off == 0.0 else ListenerPose.lateral(off)
                for off in self.pose_offsets]


@dataclass(frozen=True)
class CriterionTable:
    """Error thresholds, one per instrumental measure."""

    beam_db: float = 5.7
    snr_db: dict = field(default_factory=lambda: {
        "beamformer": 0.75, "adm": 0.42, "coherence_nr": 0.42,
        "single_nr": 0.65})

    def threshold(self, metric: str, algorithm: str | None = None) -> float:
        if metric == "beam":
            return self.beam_db
        if metric == "snr":
            return self.snr_db[algorithm]
        raise KeyError(f"no criterion for metric {metric!r}")


@dataclass
class ErrorSurface:
    """Metric values over (speaker count, band) for one condition."""

    metric: str
    method: str
    pose_offset: float
    algorithm: str | None
    speaker_counts: tuple
    band_centers: np.ndarray | None     # None for scalar metrics (ple, …)
    values: np.ndarray                  # (n_counts, n_bands) or (n_counts,)

    def key(self) -> tuple:
        return (self.metric, self.method, self.pose_offset, self.algorithm)


@dataclass
class SweepResult:
    config: SweepConfig | None
    surfaces: list
    failures: list                      # (cell descriptor, message)
    config_hash: str = ""

    def surface(self, metric, method, pose_offset, algorithm=None):
        for s in self.surfaces:
            if s.key() == (metric, method, pose_offset, algorithm):
                return s
        raise KeyError((metric, method, pose_offset, algorithm))


def _load_hrirs(config: SweepConfig) -> HrirSet:
    if config.hrir_source == "sphere":
        return synth_sphere_hrir(sample_rate=config.sample_rate,
                                 head_radius=config.head_radius,
                                 distance=config.array_radius)
    return load_hrir_set(config.hrir_source)


_UNION_CHANNELS = CHANNELS_BEAMFORMER        # superset of all algorithm inputs


def _make_algorithms(hrir_set: HrirSet, names) -> dict:
    algos = {}
    for name in names:
        if name == "beamformer":
            algos[name] = MvdrBeamformer(design_mvdr(hrir_set))
        elif name == "adm":
            spacing = 0.01
            algos[name] = AdaptiveDifferentialMic(mic_spacing=spacing)
        elif name == "coherence_nr":
            algos[name] = CoherenceNoiseReduction()
        elif name == "single_nr":
            algos[name] = SingleChannelNoiseReduction()
        else:
            raise ValueError(f"unknown algorithm {name!r}")
    return algos


class _PoseContext:
    """Per-pose reference data shared by every (method, N) cell."""

    def __init__(self, config: SweepConfig, hrir_set: HrirSet,
                 pose: ListenerPose, algorithms: dict, grid: BandGrid,
                 lookup, pattern_algorithm):
        self.pose = pose
        self.grid = grid
        self.lookup = lookup
        scene = make_default_scene(config.scene_duration, config.sample_rate,
                                   n_noise=config.n_noise_sources,
                                   seed=config.seed)
        self.scene = scene
        self.ref_sweeps = {}
        if "snr" in config.metrics:
            stems = render_scene_stems(scene, None, None, hrir_set, pose,
                                       _UNION_CHANNELS)
            for name, alg in algorithms.items():
                sub = select_channels(stems, alg.channels)
                self.ref_sweeps[name] = snr_improvement(
                    alg, sub, grid, input_snrs=config.input_snrs)
        self.ref_pattern = None
        if "beam" in config.metrics:
            self.ref_pattern = beam_pattern(
                pattern_algorithm, None, None, hrir_set, pose, grid,
                probe_duration=config.pattern_probe_duration, seed=config.seed)
        self.ref_doas = None
        self.probe = speech_shaped_noise(1.0, config.sample_rate,
                                         seed=config.seed + 1)
        if "ple" in config.metrics or "spectral" in config.metrics:
            self.ref_renders = {}
            self.ref_doas = {}
            for az in PLE_TARGET_AZIMUTHS:
                src = VirtualSource(self.probe,
                                    Position2D.from_polar(az, config.array_radius))
                buf = render_reference(src, hrir_set, pose,
                                       CHANNELS_LOCALIZATION)
                self.ref_renders[az] = buf
                if "ple" in config.metrics:
                    est = localize(buf, lookup)
                    self.ref_doas[az] = est.fine_azimuth


def _evaluate_cell(config: SweepConfig, hrir_set: HrirSet, ctx: _PoseContext,
                   algorithms: dict, pattern_algorithm, method_name: str,
                   count: int) -> dict:
    """All metric values for one (method, N, pose) cell."""
    method = ReproductionMethod(method_name)
    array = build_array(count, radius=config.array_radius)
    out = {}
    if "beam" in config.metrics:
        pat = beam_pattern(pattern_algorithm, method, array, hrir_set,
                           ctx.pose, ctx.grid,
                           probe_duration=config.pattern_probe_duration,
                           seed=config.seed)
        out["beam"] = beam_error(ctx.ref_pattern, pat,
                                 normalized=config.beam_error_normalized)
    if "snr" in config.metrics:
        stems = render_scene_stems(ctx.scene, method, array, hrir_set,
                                   ctx.pose, _UNION_CHANNELS)
        for name, alg in algorithms.items():
            sub = select_channels(stems, alg.channels)
            sweep = snr_improvement(alg, sub, ctx.grid,
                                    input_snrs=config.input_snrs)
            out[("snr", name)] = snr_error(ctx.ref_sweeps[name], sweep)
    if "ple" in config.metrics or "spectral" in config.metrics:
        bank = ReceiverBank(array, hrir_set, ctx.pose, CHANNELS_LOCALIZATION)
        doa_err = []
        distances = []
        for az in PLE_TARGET_AZIMUTHS:
            src = VirtualSource(ctx.probe,
                                Position2D.from_polar(az, config.array_radius))
            buf = render_source(method, bank, src)
            if "ple" in config.metrics:
                est = localize(buf, ctx.lookup)
                ref_doa = ctx.ref_doas[az]
                if est.fine_azimuth is None or ref_doa is None:
                    doa_err.append(np.nan)
                else:
                    doa_err.append(est.fine_azimuth - ref_doa)
            if "spectral" in config.metrics:
                ref_buf = ctx.ref_renders[az]
                distances.append(spectral_distance(
                    ref_buf.samples[0], buf.samples[0], buf.sample_rate))
        if "ple" in config.metrics:
            out["ple"] = _rms_ignore_nan(np.asarray(doa_err))
        if "spectral" in config.metrics:
            out["spectral"] = float(np.mean(distances))
    return out


def run_sweep(config: SweepConfig, hrir_set: HrirSet | None = None,
              progress=None) -> SweepResult:
    """Evaluate the whole (method x N x pose) grid.

    Deterministic for a given config; cell failures are recorded and leave
    NaNs in the affected surface instead of aborting the run.
    """
    if hrir_set is None:
        hrir_set = _load_hrirs(config)
    grid = config.band_grid()
    algorithms = _make_algorithms(hrir_set, config.algorithms)
    # The beam pattern uses the linear beamformer core; the time-variant post
    # filter would dominate the pattern differences at all frequencies.
    pattern_algorithm = None
    if "beam" in config.metrics:
        if "beamformer" in algorithms:
            design = algorithms["beamformer"].design
        else:
            design = design_mvdr(hrir_set)
        pattern_algorithm = MvdrCoreBeamformer(design)
    lookup = None
    if "ple" in config.metrics:
        lookup = build_cue_lookup(hrir_set, seed=config.seed + 2)

    n_counts = len(config.speaker_counts)
    n_bands = len(grid)
    store = {}

    def _surface_for(metric, method, pose_offset, algorithm=None):
        key = (metric, method, pose_offset, algorithm)
        if key not in store:
            banded = metric in ("beam", "snr")
            store[key] = ErrorSurface(
                metric=metric, method=method, pose_offset=pose_offset,
                algorithm=algorithm, speaker_counts=config.speaker_counts,
                band_centers=grid.centers.copy() if banded else None,
                values=np.full((n_counts, n_bands) if banded else n_counts,
                               np.nan))
        return store[key]

    failures = []
    for pose_offset, pose in zip(config.pose_offsets, config.poses()):
        ctx = _PoseContext(config, hrir_set, pose, algorithms, grid, lookup,
                           pattern_algorithm)
        for method_name in config.methods:
            for i, count in enumerate(config.speaker_counts):
                cell = (method_name, count, pose_offset)
                if progress is not None:
                    progress(cell)
                try:
                    values = _evaluate_cell(config, hrir_set, ctx, algorithms,
                                            pattern_algorithm, method_name,
                                            count)
                except Exception:
                    failures.append((cell, traceback.format_exc(limit=3)))
                    continue
                for key, val in values.items():
                    metric, algorithm = (key if isinstance(key, tuple)
                                         else (key, None))
                    surf = _surface_for(metric, method_name, pose_offset,
                                        algorithm)
                    surf.values[i] = val
    return SweepResult(config=config, surfaces=list(store.values()),
                       failures=failures, config_hash=config.config_hash())


# ---------------------------------------------------------------------------
# Contours, aliasing overlay, usable bandwidth


def aliasing_overlay(config: SweepConfig, pose_offset: float) -> np.ndarray:
    """f_max per configured N; the listening radius is the distance of the
    far ear from the array center."""
    r = abs(pose_offset) + config.head_radius
    return np.array([aliasing_limit(n, r).max_frequency
                     for n in config.speaker_counts])


def contour_extract(surface: ErrorSurface, threshold: float) -> list:
    """Criterion contour as (N, f) points: per speaker count, the lowest
    crossing of the threshold, interpolated in log frequency.

    Returns an empty list when the surface never crosses the threshold.
    """
    if surface.band_centers is None:
        raise ValueError("contours require a banded surface")
    points = []
    freqs = surface.band_centers
    for i, count in enumerate(surface.speaker_counts):
        row = surface.values[i]
        good = np.isfinite(row)
        if not good.any():
            continue
        above = row > threshold
        if not above[good].any():
            continue
        j = int(np.argmax(above & good))
        if j == 0 or not good[j - 1]:
            points.append((count, float(freqs[j])))
            continue
        f0, f1 = np.log(freqs[j - 1]), np.log(freqs[j])
        v0, v1 = row[j - 1], row[j]
        t = (threshold - v0) / (v1 - v0) if v1 != v0 else 1.0
        points.append((count, float(np.exp(f0 + t * (f1 - f0)))))
    return points


def usable_bandwidth(surface: ErrorSurface, threshold: float) -> dict:
    """Largest frequency up to which all lower bands meet the criterion,
    per speaker count; 0.0 when even the lowest band fails."""
    out = {}
    freqs = surface.band_centers
    for i, count in enumerate(surface.speaker_counts):
        row = surface.values[i]
        ok = (row <= threshold) & np.isfinite(row)
        j = int(np.argmin(ok)) if not ok.all() else len(ok)
        out[count] = float(freqs[j - 1]) if j > 0 else 0.0
    return out


def criterion_match_count(surface: ErrorSurface, threshold: float) -> int:
    return int(np.sum((surface.values <= threshold)
                      & np.isfinite(surface.values)))


def calibrate_threshold(surface: ErrorSurface,
                        aliasing_fmax: np.ndarray) -> float:
    """Threshold whose criterion-match count equals the number of grid
    points below the aliasing limit (the threshold-setting rule used for
    the published criteria)."""
    below = np.sum(surface.band_centers[None, :] <= aliasing_fmax[:, None])
    vals = np.sort(surface.values[np.isfinite(surface.values)].ravel())
    if below <= 0:
        return float(vals[0]) - 1.0 if len(vals) else 0.0
    below = min(int(below), len(vals))
    return float(vals[below - 1])


# ---------------------------------------------------------------------------
# Serialization and reporting


def write_surfaces_csv(result: SweepResult, path) -> None:
    """Long-format CSV: one row per (surface, N, band)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["schema_version", SCHEMA_VERSION,
                     "config_hash", result.config_hash])
    writer.writerow(["metric", "algorithm", "method", "pose_offset",
                     "speaker_count", "band_hz", "value"])
    for surf in sorted(result.surfaces, key=lambda s: str(s.key())):
        for i, count in enumerate(surf.speaker_counts):
            if surf.band_centers is None:
                writer.writerow([surf.metric, surf.algorithm or "",
                                 surf.method, f"{surf.pose_offset:g}",
                                 count, "", _fmt(surf.values[i])])
            else:
                for b, fc in enumerate(surf.band_centers):
                    writer.writerow([surf.metric, surf.algorithm or "",
                                     surf.method, f"{surf.pose_offset:g}",
                                     count, f"{fc:.6g}",
                                     _fmt(surf.values[i, b])])
    Path(path).write_text(buf.getvalue())


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    return f"{float(value):.10g}"


def load_surfaces_csv(path) -> SweepResult:
    """Rebuild surfaces from a CSV written by write_surfaces_csv."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][0] != "schema_version":
        raise ValueError(f"{path}: not a sweep surface CSV")
    config_hash = rows[0][3]
    cells = {}
    for metric, algorithm, method, pose, count, band, value in rows[2:]:
        key = (metric, method, float(pose), algorithm or None)
        cells.setdefault(key, []).append(
            (int(count), float(band) if band else None, float(value)))
    surfaces = []
    for (metric, method, pose, algorithm), entries in cells.items():
        counts = tuple(sorted({c for c, _, _ in entries}))
        bands = sorted({b for _, b, _ in entries if b is not None})
        if bands:
            values = np.full((len(counts), len(bands)), np.nan)
            for c, b, v in entries:
                values[counts.index(c), bands.index(b)] = v
            band_centers = np.asarray(bands)
        else:
            values = np.full(len(counts), np.nan)
            for c, _, v in entries:
                values[counts.index(c)] = v
            band_centers = None
        surfaces.append(ErrorSurface(
            metric=metric, method=method, pose_offset=pose,
            algorithm=algorithm, speaker_counts=counts,
            band_centers=band_centers, values=values))
    return SweepResult(config=None, surfaces=surfaces, failures=[],
                       config_hash=config_hash)


def write_manifest(result: SweepResult, path) -> None:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": result.config_hash,
        "config": yaml.safe_load(result.config.to_yaml()),
        "n_surfaces": len(result.surfaces),
        "failures": [{"cell": list(cell), "error": msg.splitlines()[-1]}
                     for cell, msg in result.failures],
    }
    Path(path).write_text(yaml.safe_dump(manifest, sort_keys=True))


def report(result: SweepResult, criteria: CriterionTable | None = None) -> str:
    """Human-readable usable-bandwidth summary for every criterion metric."""
    criteria = criteria or CriterionTable()
    lines = [f"sweep report (config {result.config_hash})", ""]
    if not result.surfaces:
        return "\n".join(lines + ["no surfaces computed"])
    for surf in sorted(result.surfaces, key=lambda s: str(s.key())):
        if surf.metric not in ("beam", "snr"):
            continue
        thr = criteria.threshold(surf.metric, surf.algorithm)
        bw = usable_bandwidth(surf, thr)
        name = surf.metric + (f"/{surf.algorithm}" if surf.algorithm else "")
        lines.append(f"{name} {surf.method} pose={surf.pose_offset:g} m "
                     f"(criterion {thr:g} dB)")
        for count, f in bw.items():
            label = f"{f:.0f} Hz" if f > 0 else "none"
            lines.append(f"  N={count:3d}: usable to {label}")
    scalar = [s for s in result.surfaces if s.band_centers is None]
    if scalar:
        lines.append("")
        for surf in sorted(scalar, key=lambda s: str(s.key())):
            vals = ", ".join(f"N={c}: {_fmt(v)}" for c, v in
                             zip(surf.speaker_counts, surf.values))
            lines.append(f"{surf.metric} {surf.method} "
                         f"pose={surf.pose_offset:g} m: {vals}")
    if result.failures:
        lines.append("")
        lines.append(f"{len(result.failures)} cell(s) failed:")
        for cell, msg in result.failures:
            lines.append(f"  {cell}: {msg.splitlines()[-1]}")
    return "\n".join(lines)
