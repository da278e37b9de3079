"""Scene rendering: speaker feeds, receiver convolution, free-field reference.

The whole chain is linear, so target and noise stems are rendered separately
and summed; their sum equals the rendered mixture samplewise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .dsp import FRACTIONAL_DELAY_TAPS, delay_signal
from .geometry import ListenerPose, Position2D, SpeakerArray
from .hrir import HrirSet, translate_listener
from .panner import (SPEED_OF_SOUND, DrivingWeights, ReproductionMethod,
                     method_weights)

CALIBRATION_CHANNEL = "in_ear_L"

# Keep the full ringing tail of the fractional-delay filter so that delaying
# before or after a convolution yields identical results.
_DELAY_TAIL = FRACTIONAL_DELAY_TAPS // 2


def _delayed_len(n: int, delay_samples: float) -> int:
    return n + int(np.ceil(delay_samples)) + 1 + _DELAY_TAIL


@dataclass
class AudioBuffer:
    """Multi-channel audio, channel-major samples."""

    sample_rate: int
    samples: np.ndarray     # (channels, n)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("non-finite samples")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.samples.shape[1] / self.sample_rate


@dataclass(frozen=True)
class VirtualSource:
    signal: np.ndarray
    position: Position2D
    level_offset_db: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    """A frontal target plus spatially distributed noise sources."""

    target: VirtualSource
    noises: tuple
    nominal_input_snr: float = 0.0


@dataclass
class RenderOutput:
    """Separated stems; mixture == target_only + noise_only samplewise."""

    mixture: AudioBuffer
    target_only: AudioBuffer
    noise_only: AudioBuffer
    channels: tuple
    metadata: dict = field(default_factory=dict)


class ReceiverBank:
    """Precomputed speaker-to-listener IRs for one (array, set, pose) triple.

    Immutable once built; shared across renders of all sources in a scene.
    """

    def __init__(self, array: SpeakerArray, hrir_set: HrirSet,
                 pose: ListenerPose, channels: tuple):
        self.array = array
        self.set = hrir_set
        self.pose = pose
        self.channels = tuple(channels)
        ch_idx = [hrir_set.channel_index(c) for c in self.channels]
        irs = [translate_listener(hrir_set, pose, s) for s in array.positions]
        # (n_speakers, n_selected_channels, ir_len)
        self.irs = np.stack([ir[ch_idx] for ir in irs])

    def weighted_ir(self, weights: DrivingWeights) -> np.ndarray:
        """Effective source-to-receiver IR: speaker sum folded with the
        shared source gain/delay, shape (n_channels, len)."""
        w = weights.weights * weights.source_attenuation
        summed = np.tensordot(w, self.irs, axes=(0, 0))
        delay = weights.source_delay * self.set.sample_rate
        out_len = _delayed_len(summed.shape[1], delay)
        out = np.empty((summed.shape[0], out_len))
        for c in range(summed.shape[0]):
            out[c] = delay_signal(summed[c], delay, out_len=out_len)
        return out


def render_speaker_feeds(method: ReproductionMethod, array: SpeakerArray,
                         source: VirtualSource, sample_rate: int,
                         speed_of_sound: float = SPEED_OF_SOUND) -> AudioBuffer:
    """Loudspeaker driving signals for one source: w_k/||r|| at the source delay."""
    weights = method_weights(method, array, source.position,
                             speed_of_sound=speed_of_sound)
    delay = weights.source_delay * sample_rate
    x = np.asarray(source.signal, dtype=float)
    out_len = _delayed_len(len(x), delay)
    feeds = np.zeros((array.count, out_len))
    delayed = None
    for k, w in enumerate(weights.weights):
        if w == 0.0:
            continue
        if delayed is None:
            delayed = delay_signal(x, delay, out_len=out_len)
        feeds[k] = (w * weights.source_attenuation) * delayed
    return AudioBuffer(sample_rate=sample_rate, samples=feeds)


def render_to_receiver(feeds: AudioBuffer, bank: ReceiverBank) -> AudioBuffer:
    """Receiver-channel signals: per channel, sum of feeds convolved with the
    speaker-to-listener IRs."""
    if feeds.channels != bank.array.count:
        raise ValueError("feed channel count does not match speaker count")
    x = feeds.samples
    active = np.flatnonzero(np.any(x != 0.0, axis=1))
    n_out = x.shape[1] + bank.irs.shape[2] - 1
    out = np.zeros((len(bank.channels), n_out))
    for k in active:
        out += fftconvolve(x[k][None, :], bank.irs[k], axes=1)
    return AudioBuffer(sample_rate=feeds.sample_rate, samples=out)


def render_source(method: ReproductionMethod, bank: ReceiverBank,
                  source: VirtualSource,
                  speed_of_sound: float = SPEED_OF_SOUND) -> AudioBuffer:
    """Render one source through a reproduction method to the receiver
    channels, using the precomputed effective IR (equivalent to
    render_speaker_feeds + render_to_receiver, but one convolution per
    channel)."""
    weights = method_weights(method, bank.array, source.position,
                             speed_of_sound=speed_of_sound)
    eff = bank.weighted_ir(weights)
    x = np.asarray(source.signal, dtype=float)
    return AudioBuffer(sample_rate=bank.set.sample_rate,
                       samples=fftconvolve(x[None, :], eff, axes=1))


def render_reference(source: VirtualSource, hrir_set: HrirSet,
                     pose: ListenerPose, channels: tuple,
                     speed_of_sound: float = SPEED_OF_SOUND) -> AudioBuffer:
    """Free-field rendering: the source acts as its own loudspeaker.

    Convolves the signal with the listener-translated HRIR of the source
    position and applies the source transmission (1/distance gain at the
    measurement-distance delay), which makes a speaker-position source
    identical to its nearest-speaker rendering.
    """
    ch_idx = [hrir_set.channel_index(c) for c in channels]
    tir = translate_listener(hrir_set, pose, source.position,
                             speed_of_sound=speed_of_sound)[ch_idx]
    delay = hrir_set.distance * hrir_set.sample_rate / speed_of_sound
    gain = 1.0 / hrir_set.distance
    x = np.asarray(source.signal, dtype=float)
    conv = fftconvolve(x[None, :], tir, axes=1)
    out_len = _delayed_len(conv.shape[1], delay)
    out = np.empty((len(ch_idx), out_len))
    for c in range(len(ch_idx)):
        out[c] = gain * delay_signal(conv[c], delay, out_len=out_len)
    return AudioBuffer(sample_rate=hrir_set.sample_rate, samples=out)


def _render_any(method, bank, source, hrir_set, pose, channels):
    if method is None:
        return render_reference(source, hrir_set, pose, channels)
    return render_source(method, bank, source)


def mix_scene(scene: SceneSpec, method: ReproductionMethod | None,
              array: SpeakerArray, hrir_set: HrirSet, pose: ListenerPose,
              channels: tuple) -> RenderOutput:
    """Render a scene to separated stems with calibrated input SNR.

    `method=None` renders the free-field reference condition. Noise stems are
    scaled so the broadband target-to-noise power ratio at the left in-ear
    channel equals `scene.nominal_input_snr` dB.
    """
    stems = render_scene_stems(scene, method, array, hrir_set, pose, channels)
    return calibrate_stems(stems, scene.nominal_input_snr)


def render_scene_stems(scene: SceneSpec, method: ReproductionMethod | None,
                       array: SpeakerArray, hrir_set: HrirSet,
                       pose: ListenerPose, channels: tuple) -> RenderOutput:
    """Uncalibrated stems plus calibration-channel powers in the metadata.

    Rendering is linear, so SNR variants can rescale the noise stem without
    re-rendering (see calibrate_stems).
    """
    channels = tuple(channels)
    render_channels = channels
    if CALIBRATION_CHANNEL not in render_channels:
        render_channels = channels + (CALIBRATION_CHANNEL,)
    bank = None
    if method is not None:
        bank = ReceiverBank(array, hrir_set, pose, render_channels)

    target = _render_any(method, bank, scene.target, hrir_set, pose,
                         render_channels)
    n_len = target.samples.shape[1]
    noise_parts = []
    for src in scene.noises:
        scaled = VirtualSource(
            signal=np.asarray(src.signal, dtype=float)
            * 10.0 ** (src.level_offset_db / 20.0),
            position=src.position)
        part = _render_any(method, bank, scaled, hrir_set, pose,
                           render_channels)
        noise_parts.append(part.samples)
        n_len = max(n_len, part.samples.shape[1])

    t = np.zeros((len(render_channels), n_len))
    t[:, :target.samples.shape[1]] = target.samples
    n = np.zeros((len(render_channels), n_len))
    for part in noise_parts:
        n[:, :part.shape[1]] += part

    cal = render_channels.index(CALIBRATION_CHANNEL)
    p_t = float(np.mean(np.square(t[cal])))
    p_n = float(np.mean(np.square(n[cal])))
    keep = [render_channels.index(c) for c in channels]
    rate = hrir_set.sample_rate
    return RenderOutput(
        mixture=AudioBuffer(rate, t[keep] + n[keep]),
        target_only=AudioBuffer(rate, t[keep]),
        noise_only=AudioBuffer(rate, n[keep]),
        channels=channels,
        metadata={"target_power": p_t, "noise_power": p_n,
                  "calibration_channel": CALIBRATION_CHANNEL})


def select_channels(stems: RenderOutput, channels: tuple) -> RenderOutput:
    """Stems restricted to a channel subset (no re-rendering; calibration
    metadata is preserved since it refers to the calibration channel)."""
    channels = tuple(channels)
    idx = [stems.channels.index(c) for c in channels]
    rate = stems.mixture.sample_rate
    return RenderOutput(
        mixture=AudioBuffer(rate, stems.mixture.samples[idx]),
        target_only=AudioBuffer(rate, stems.target_only.samples[idx]),
        noise_only=AudioBuffer(rate, stems.noise_only.samples[idx]),
        channels=channels, metadata=dict(stems.metadata))


def calibrate_stems(stems: RenderOutput, nominal_input_snr: float) -> RenderOutput:
    """Scale the noise stem so the calibration-channel SNR hits the nominal value."""
    p_t = stems.metadata["target_power"]
    p_n = stems.metadata["noise_power"]
    if p_t <= 0.0 or p_n <= 0.0:
        raise ValueError("cannot calibrate SNR: zero-power stem")
    scale = np.sqrt(p_t / p_n) * 10.0 ** (-nominal_input_snr / 20.0)
    rate = stems.mixture.sample_rate
    noise = AudioBuffer(rate, stems.noise_only.samples * scale)
    target = stems.target_only
    meta = dict(stems.metadata)
    meta.update(noise_scale=scale, nominal_input_snr=nominal_input_snr)
    return RenderOutput(
        mixture=AudioBuffer(rate, target.samples + noise.samples),
        target_only=target, noise_only=noise,
        channels=stems.channels, metadata=meta)
