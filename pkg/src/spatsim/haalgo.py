"""Reference hearing aid algorithms on a shared short-time spectral core.

Four algorithm classes: a fixed binaural MVDR beamformer with post filter,
an adaptive differential microphone, an interaural-coherence noise reduction,
and an oracle single-channel spectral-amplitude noise reduction.

Every algorithm derives its time-variant parameters from the mixture alone
and exposes shadow filtering: the identical linear time-variant operation is
applied to the mixture and to the separated target/noise stems, so processed
target + processed noise equals the processed mixture.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ive

from .binsim import AudioBuffer, RenderOutput
from .hrir import (CHANNELS_ADM, CHANNELS_BEAMFORMER, CHANNELS_BINAURAL_NR,
                   CHANNELS_SINGLE_NR, HrirSet)
from .panner import SPEED_OF_SOUND
from .stft import StftProcessor


class DesignError(RuntimeError):
    """Raised when an algorithm design step is numerically unusable."""


@dataclass
class ShadowOutput:
    """Stems processed with parameters derived from the mixture only."""

    mixture: AudioBuffer
    target: AudioBuffer
    noise: AudioBuffer


def _check_stems(stems: RenderOutput, rel_tol: float = 1e-6) -> None:
    s = stems.mixture.samples
    d = s - (stems.target_only.samples + stems.noise_only.samples)
    scale = max(float(np.abs(s).max()), 1e-30)
    if float(np.abs(d).max()) > rel_tol * scale:
        raise ValueError("stems do not sum to the mixture")


class SpectralGainAlgorithm:
    """Base for algorithms expressed as a time-variant linear map on STFTs."""

    channels: tuple
    name: str

    def __init__(self, stft: StftProcessor | None = None):
        self.stft = stft or StftProcessor()

    # Subclasses: derive the linear operation from the mixture STFT.
    def _operation(self, mix_spec: np.ndarray, aux: dict):
        raise NotImplementedError

    # Subclasses: apply the derived operation to any STFT with the same
    # channel layout as the input.
    def _apply(self, op, spec: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _aux_from_stems(self, stems: RenderOutput) -> dict:
        return {}

    def _aux_from_buffer(self, buf: AudioBuffer) -> dict:
        return {}

    @property
    def output_channels(self) -> int:
        return len(self.channels)

    def process(self, buf: AudioBuffer) -> AudioBuffer:
        if buf.channels != len(self.channels):
            raise ValueError(
                f"{self.name} expects {len(self.channels)} channels, "
                f"got {buf.channels}")
        spec = self.stft.analyze(buf.samples)
        op = self._operation(spec, self._aux_from_buffer(buf))
        out = self.stft.synthesize(self._apply(op, spec), buf.samples.shape[1])
        return AudioBuffer(buf.sample_rate, out)

    def shadow(self, stems: RenderOutput) -> ShadowOutput:
        _check_stems(stems)
        n = stems.mixture.samples.shape[1]
        mix_spec = self.stft.analyze(stems.mixture.samples)
        op = self._operation(mix_spec, self._aux_from_stems(stems))
        rate = stems.mixture.sample_rate
        out = []
        for spec in (mix_spec,
                     self.stft.analyze(stems.target_only.samples),
                     self.stft.analyze(stems.noise_only.samples)):
            out.append(AudioBuffer(
                rate, self.stft.synthesize(self._apply(op, spec), n)))
        return ShadowOutput(*out)


def shadow_filter(algorithm: SpectralGainAlgorithm,
                  stems: RenderOutput) -> ShadowOutput:
    return algorithm.shadow(stems)


# ---------------------------------------------------------------------------
# Static binaural MVDR beamformer with binaural post filter


@dataclass
class BeamformerDesign:
    """Frequency-domain MVDR weights over the six hearing aid channels."""

    weights: np.ndarray          # (bins, 6)
    propagation: np.ndarray      # (bins, 6) steering vectors
    noise_cov: np.ndarray        # (bins, 6, 6) diffuse model, loaded
    post_scale: np.ndarray       # (bins,) blocked-power -> output-power factor
    steering_azimuth: float


def _channel_spectra(hrir_set: HrirSet, azimuth: float, channels: tuple,
                     freqs_norm: np.ndarray) -> np.ndarray:
    """DTFT of the channel IRs at normalized frequencies -> (bins, channels)."""
    from .hrir import interpolate_direction

    irs = interpolate_direction(hrir_set, azimuth)
    idx = [hrir_set.channel_index(c) for c in channels]
    n = np.arange(irs.shape[1])
    basis = np.exp(-2j * np.pi * freqs_norm[:, None] * n[None, :])
    return basis @ irs[idx].T


def design_mvdr(hrir_set: HrirSet, steering_azimuth: float = 0.0,
                stft: StftProcessor | None = None,
                diagonal_loading: float = 1e-4,
                max_condition: float = 1e8) -> BeamformerDesign:
    """MVDR design from sampled propagation vectors and a diffuse noise model.

    The diffuse covariance is the isotropic average of the propagation-vector
    outer products over the HRIR azimuth grid, diagonally loaded relative to
    its trace.
    """
    stft = stft or StftProcessor(sample_rate=hrir_set.sample_rate)
    freqs_norm = stft.frequencies / hrir_set.sample_rate
    n_ch = len(CHANNELS_BEAMFORMER)

    phi = np.zeros((stft.bins, n_ch, n_ch), dtype=complex)
    for az in hrir_set.azimuths:
        d_az = _channel_spectra(hrir_set, az, CHANNELS_BEAMFORMER, freqs_norm)
        phi += d_az[:, :, None] * d_az[:, None, :].conj()
    phi /= len(hrir_set.azimuths)

    trace = np.real(np.trace(phi, axis1=1, axis2=2))
    phi += (diagonal_loading * np.maximum(trace, 1e-30) / n_ch)[:, None, None] \
        * np.eye(n_ch)

    cond = np.linalg.cond(phi)
    if np.any(cond > max_condition):
        raise DesignError(
            f"diffuse covariance ill-conditioned: max cond {cond.max():.3g}")

    d = _channel_spectra(hrir_set, steering_azimuth, CHANNELS_BEAMFORMER,
                         freqs_norm)
    phi_inv_d = np.linalg.solve(phi, d[:, :, None])[:, :, 0]
    denom = np.einsum("bc,bc->b", d.conj(), phi_inv_d)
    w = phi_inv_d / denom[:, None]

    # Scale factor mapping mean blocked-channel power to the beamformer
    # output power under the diffuse model; lets the post filter use the
    # blocking residual as an absolute noise estimate.
    d_norm2 = np.einsum("bc,bc->b", d.conj(), d).real
    proj = d[:, :, None] * d[:, None, :].conj() / d_norm2[:, None, None]
    block = np.eye(n_ch) - proj
    phi_blocked = block @ phi @ block.conj().transpose(0, 2, 1)
    blocked_power = np.real(np.trace(phi_blocked, axis1=1, axis2=2)) / n_ch
    out_power = np.real(np.einsum("bc,bcd,bd->b", w.conj(), phi, w))
    post_scale = out_power / np.maximum(blocked_power, 1e-30)

    return BeamformerDesign(weights=w, propagation=d, noise_cov=phi,
                            post_scale=post_scale,
                            steering_azimuth=steering_azimuth)


class MvdrBeamformer(SpectralGainAlgorithm):
    """Fixed MVDR beamformer; a real post-filter gain derived from the
    beamformer output is applied to both front microphones, preserving
    binaural cues. Output is 2-channel (left front, right front)."""

    channels = CHANNELS_BEAMFORMER
    name = "beamformer"
    _REF_IDX = (CHANNELS_BEAMFORMER.index("ha_L_front"),
                CHANNELS_BEAMFORMER.index("ha_R_front"))
    # Input channels that SNR/beam measurements compare the output against.
    reference_channel_indices = _REF_IDX

    def __init__(self, design: BeamformerDesign,
                 stft: StftProcessor | None = None,
                 gain_floor_db: float = -20.0,
                 smoothing_time: float = 0.02):
        super().__init__(stft)
        self.design = design
        self.gain_floor = 10.0 ** (gain_floor_db / 20.0)
        self.smoothing_time = smoothing_time

    @property
    def output_channels(self) -> int:
        return 2

    def _operation(self, mix_spec: np.ndarray, aux: dict) -> np.ndarray:
        w = self.design.weights
        d = self.design.propagation
        # Beamformer output and blocking residual per (frame, bin).
        y = np.einsum("bc,cfb->fb", w.conj(), mix_spec)
        d_norm2 = np.einsum("bc,bc->b", d.conj(), d).real
        coef = np.einsum("bc,cfb->fb", d.conj(), mix_spec) / d_norm2
        blocked = mix_spec - d.T[:, None, :] * coef[None]
        noise_est = (np.mean(np.abs(blocked) ** 2, axis=0)
                     * self.design.post_scale[None, :])

        alpha = np.exp(-1.0 / (self.stft.frame_rate * self.smoothing_time))
        p_y = _one_pole(np.abs(y) ** 2, alpha)
        p_n = _one_pole(noise_est, alpha)
        snr = np.maximum(p_y - p_n, 0.0) / np.maximum(p_n, 1e-30)
        gain = snr / (1.0 + snr)
        return np.maximum(gain, self.gain_floor)

    def _apply(self, gain: np.ndarray, spec: np.ndarray) -> np.ndarray:
        return spec[list(self._REF_IDX)] * gain[None]


class MvdrCoreBeamformer(SpectralGainAlgorithm):
    """The raw (monaural) MVDR output without the post filter.

    Used to quantify the spatial noise reduction of the design itself;
    the listening output stays with MvdrBeamformer.
    """

    channels = CHANNELS_BEAMFORMER
    name = "beamformer_core"
    _REF_IDX = MvdrBeamformer._REF_IDX
    reference_channel_indices = _REF_IDX

    def __init__(self, design: BeamformerDesign,
                 stft: StftProcessor | None = None):
        super().__init__(stft)
        self.design = design

    @property
    def output_channels(self) -> int:
        return 1

    def _operation(self, mix_spec: np.ndarray, aux: dict):
        return None

    def _apply(self, op, spec: np.ndarray) -> np.ndarray:
        return np.einsum("bc,cfb->fb", self.design.weights.conj(), spec)[None]


# ---------------------------------------------------------------------------
# Adaptive differential microphone


@dataclass
class AdmState:
    """Adapted mixing weights per (frame, band), clamped to [0, 1]."""

    beta: np.ndarray
    band_of_bin: np.ndarray


class AdaptiveDifferentialMic(SpectralGainAlgorithm):
    """Front/back cardioids by delay-and-subtract; the back cardioid is
    scaled by an NLMS-adapted weight and subtracted to steer a rear null.
    Input is (front mic, rear mic); output is one channel."""

    channels = CHANNELS_ADM
    name = "adm"

    def __init__(self, mic_spacing: float, stft: StftProcessor | None = None,
                 step: float = 0.05, n_bands: int = 4,
                 speed_of_sound: float = SPEED_OF_SOUND,
                 eq_limit_db: float = 20.0):
        super().__init__(stft)
        self.mic_spacing = mic_spacing
        self.step = step
        freqs = self.stft.frequencies
        delay = mic_spacing / speed_of_sound
        self.phase = np.exp(-2j * np.pi * freqs * delay)
        # Octave bands for the adaptive weight; lowest band absorbs the rest.
        upper = self.stft.sample_rate / 2.0
        edges = upper / (2.0 ** np.arange(n_bands, 0, -1))
        self.band_of_bin = np.searchsorted(edges, freqs, side="right")
        self.n_bands = n_bands + 1
        # Forward cardioid equalization: invert the 2 sin(omega T) slope of
        # the delay-and-subtract pair for a frontal source.
        response = 2.0 * np.abs(np.sin(2.0 * np.pi * freqs * delay))
        limit = 10.0 ** (-eq_limit_db / 20.0)
        self.eq = 1.0 / np.maximum(response, limit)

    @property
    def output_channels(self) -> int:
        return 1

    def _cardioids(self, spec: np.ndarray) -> tuple:
        front, rear = spec[0], spec[1]
        c_front = front - rear * self.phase[None, :]
        c_back = rear - front * self.phase[None, :]
        return c_front, c_back

    def _operation(self, mix_spec: np.ndarray, aux: dict) -> AdmState:
        c_front, c_back = self._cardioids(mix_spec)
        frames = mix_spec.shape[1]
        beta = np.zeros((frames, self.n_bands))
        b = np.zeros(self.n_bands)
        for t in range(frames):
            bt = b[self.band_of_bin]
            err = c_front[t] - bt * c_back[t]
            num = np.bincount(self.band_of_bin,
                              weights=np.real(np.conj(c_back[t]) * err),
                              minlength=self.n_bands)
            den = np.bincount(self.band_of_bin,
                              weights=np.abs(c_back[t]) ** 2,
                              minlength=self.n_bands)
            b = np.clip(b + self.step * num / np.maximum(den, 1e-20), 0.0, 1.0)
            beta[t] = b
        return AdmState(beta=beta, band_of_bin=self.band_of_bin)

    def _apply(self, op: AdmState, spec: np.ndarray) -> np.ndarray:
        c_front, c_back = self._cardioids(spec)
        bt = op.beta[:, op.band_of_bin]
        return ((c_front - bt * c_back) * self.eq[None, :])[None]


# ---------------------------------------------------------------------------
# Binaural coherence-based noise reduction


def default_efficiency_profile(freqs: np.ndarray) -> np.ndarray:
    """Efficiency exponent: 0 below 500 Hz, linear ramp to 0.5 at 1 kHz."""
    return np.clip((freqs - 500.0) / 1000.0, 0.0, 0.5)


class CoherenceNoiseReduction(SpectralGainAlgorithm):
    """Interaural-coherence-driven Wiener-like gain applied to both channels.

    Coherence is the vector strength of the low-pass filtered complex
    interaural phase difference; the band gain is coherence**beta(f).
    """

    channels = CHANNELS_BINAURAL_NR
    name = "coherence_nr"

    def __init__(self, stft: StftProcessor | None = None,
                 time_constant: float = 0.040,
                 efficiency_profile=default_efficiency_profile):
        super().__init__(stft)
        self.time_constant = time_constant
        self.beta = efficiency_profile(self.stft.frequencies)

    def _operation(self, mix_spec: np.ndarray, aux: dict) -> np.ndarray:
        cross = mix_spec[0] * np.conj(mix_spec[1])
        mag = np.abs(cross)
        ipd_vec = np.where(mag > 0.0, cross / np.maximum(mag, 1e-300), 1.0)
        alpha = np.exp(-1.0 / (self.stft.frame_rate * self.time_constant))
        smoothed = _one_pole(ipd_vec, alpha)
        gamma = np.minimum(np.abs(smoothed), 1.0)
        return gamma ** self.beta[None, :]

    def _apply(self, gain: np.ndarray, spec: np.ndarray) -> np.ndarray:
        return spec * gain[None]


# ---------------------------------------------------------------------------
# Oracle single channel noise reduction (short-time spectral amplitude)


class SingleChannelNoiseReduction(SpectralGainAlgorithm):
    """Short-time spectral amplitude estimator with an oracle noise spectrum.

    A-posteriori SNR uses the true per-frame noise spectrum; the a-priori SNR
    follows the decision-directed recursion. Classic MMSE-STSA gain rule
    (Ephraim & Malah 1984).
    """

    channels = CHANNELS_SINGLE_NR
    name = "single_nr"

    def __init__(self, stft: StftProcessor | None = None,
                 dd_alpha: float = 0.5, gain_floor_db: float = -40.0):
        super().__init__(stft)
        self.dd_alpha = dd_alpha
        self.gain_floor = 10.0 ** (gain_floor_db / 20.0)

    def _aux_from_stems(self, stems: RenderOutput) -> dict:
        return {"noise_spec": self.stft.analyze(stems.noise_only.samples)[0]}

    def process_with_oracle(self, buf: AudioBuffer,
                            oracle_noise: AudioBuffer) -> AudioBuffer:
        if buf.samples.shape != oracle_noise.samples.shape:
            raise ValueError("oracle noise stem must match the input shape")
        spec = self.stft.analyze(buf.samples)
        op = self._operation(spec,
                             {"noise_spec": self.stft.analyze(
                                 oracle_noise.samples)[0]})
        out = self.stft.synthesize(self._apply(op, spec), buf.samples.shape[1])
        return AudioBuffer(buf.sample_rate, out)

    def process(self, buf: AudioBuffer) -> AudioBuffer:
        raise TypeError("oracle algorithm: use process_with_oracle or shadow")

    def _operation(self, mix_spec: np.ndarray, aux: dict) -> np.ndarray:
        noise_spec = aux.get("noise_spec")
        if noise_spec is None:
            raise ValueError("oracle noise spectrum required")
        x2 = np.abs(mix_spec[0]) ** 2
        lam = np.maximum(np.abs(noise_spec) ** 2, 1e-30)
        frames, bins = x2.shape
        gains = np.empty((frames, bins))
        prev_s2 = np.zeros(bins)
        prev_lam = lam[0]
        for t in range(frames):
            post = x2[t] / lam[t]
            xi = (self.dd_alpha * prev_s2 / prev_lam
                  + (1.0 - self.dd_alpha) * np.maximum(post - 1.0, 0.0))
            xi = np.maximum(xi, 1e-6)
            g = _stsa_gain(xi, np.maximum(post, 1e-6))
            g = np.maximum(g, self.gain_floor)
            gains[t] = g
            prev_s2 = (g ** 2) * x2[t]
            prev_lam = lam[t]
        return gains

    def _apply(self, gain: np.ndarray, spec: np.ndarray) -> np.ndarray:
        return spec * gain[None]


def _stsa_gain(xi: np.ndarray, post: np.ndarray) -> np.ndarray:
    """MMSE short-time spectral amplitude gain."""
    v = np.maximum(xi * post / (1.0 + xi), 1e-10)
    small = v < 30.0
    gain = np.empty_like(v)
    vs = v[small]
    # exp(-v/2) I_n(v/2) evaluated stably via the scaled Bessel function.
    bessel = (1.0 + vs) * ive(0, vs / 2.0) + vs * ive(1, vs / 2.0)
    gain[small] = (np.sqrt(np.pi) / 2.0) * (np.sqrt(vs) / post[small]) * bessel
    # Large-v asymptote: the gain tends to the Wiener gain xi / (1 + xi).
    gain[~small] = (xi / (1.0 + xi))[~small]
    return gain


def _one_pole(x: np.ndarray, alpha: float) -> np.ndarray:
    """First-order IIR low-pass along the frame axis (axis 0)."""
    out = np.empty_like(x)
    acc = np.zeros_like(x[0])
    for t in range(x.shape[0]):
        acc = alpha * acc + (1.0 - alpha) * x[t]
        out[t] = acc
    return out
