import numpy as np
import pytest

from spatsim.binsim import (AudioBuffer, ReceiverBank, SceneSpec,
                            VirtualSource, calibrate_stems, mix_scene,
                            render_reference, render_scene_stems,
                            render_source, render_speaker_feeds,
                            render_to_receiver, select_channels)
from spatsim.geometry import ListenerPose, Position2D, build_array
from spatsim.hrir import CHANNELS_LOCALIZATION
from spatsim.panner import ReproductionMethod
from spatsim.signals import speech_shaped_noise, white_noise

RATE = 48000
CENTER = ListenerPose.center()


def _impulse(n=256):
    x = np.zeros(n)
    x[0] = 1.0
    return x


def test_audio_buffer_invariants():
    buf = AudioBuffer(RATE, np.zeros((2, 100)))
    assert buf.channels == 2
    assert buf.duration == pytest.approx(100 / RATE)
    with pytest.raises(ValueError):
        AudioBuffer(RATE, np.array([[np.nan, 0.0]]))


def test_nsp_feeds_one_hot():
    arr = build_array(8, 3.0)
    src = VirtualSource(_impulse(), Position2D.from_polar(arr.azimuth_of(3), 3.0))
    feeds = render_speaker_feeds(ReproductionMethod.NSP, arr, src, RATE)
    active = np.flatnonzero(np.any(feeds.samples != 0.0, axis=1))
    assert active.tolist() == [3]


def test_vbap_midpoint_feed_gains():
    arr = build_array(4, 3.0)
    src = VirtualSource(_impulse(), Position2D.from_polar(45.0, 3.0))
    feeds = render_speaker_feeds(ReproductionMethod.VBAP, arr, src, RATE)
    # Energy per channel: (w/||r||)^2 times the (all-pass-delayed) impulse.
    energies = np.sum(feeds.samples ** 2, axis=1)
    # The windowed-sinc delay is an approximate all-pass; allow its small
    # passband ripple.
    assert energies[0] == pytest.approx((0.70711 / 3.0) ** 2, rel=0.02)
    assert energies[1] == pytest.approx((0.70711 / 3.0) ** 2, rel=0.02)
    assert energies[2] == 0.0 and energies[3] == 0.0
    assert np.allclose(feeds.samples[0], feeds.samples[1], atol=1e-12)
    delay_idx = np.argmax(np.abs(feeds.samples[0]))
    assert delay_idx == pytest.approx(3.0 / 343.0 * RATE, abs=1.0)


def test_hoa_feed_sum_is_delayed_impulse():
    arr = build_array(8, 3.0)
    src = VirtualSource(_impulse(), Position2D.from_polar(17.0, 3.0))
    feeds = render_speaker_feeds(ReproductionMethod.HOA, arr, src, RATE)
    total = feeds.samples.sum(axis=0)
    # Sum of weights is 1, so the channel sum is the impulse delayed by tau
    # with gain 1/||r||.
    from spatsim.dsp import delay_signal

    expected = delay_signal(_impulse() / 3.0, 3.0 / 343.0 * RATE,
                            out_len=len(total))
    assert np.abs(total - expected).max() < 1e-9


def test_silent_feeds_silent_output(hrir_set):
    arr = build_array(4, 3.0)
    bank = ReceiverBank(arr, hrir_set, CENTER, CHANNELS_LOCALIZATION)
    feeds = AudioBuffer(RATE, np.zeros((4, 512)))
    out = render_to_receiver(feeds, bank)
    assert np.abs(out.samples).max() == 0.0


def test_feed_channel_count_checked(hrir_set):
    arr = build_array(4, 3.0)
    bank = ReceiverBank(arr, hrir_set, CENTER, CHANNELS_LOCALIZATION)
    with pytest.raises(ValueError):
        render_to_receiver(AudioBuffer(RATE, np.zeros((3, 64))), bank)


def test_nsp_at_speaker_equals_reference(hrir_set):
    arr = build_array(8, 3.0)
    src = VirtualSource(white_noise(0.2, RATE, seed=4),
                        Position2D.from_polar(arr.azimuth_of(2), 3.0))
    bank = ReceiverBank(arr, hrir_set, CENTER, CHANNELS_LOCALIZATION)
    nsp = render_source(ReproductionMethod.NSP, bank, src)
    ref = render_reference(src, hrir_set, CENTER, CHANNELS_LOCALIZATION)
    n = min(nsp.samples.shape[1], ref.samples.shape[1])
    resid = nsp.samples[:, :n] - ref.samples[:, :n]
    rel = np.abs(resid).max() / np.abs(ref.samples).max()
    assert 20.0 * np.log10(rel + 1e-300) < -60.0


def test_render_source_matches_feed_path(hrir_set):
    arr = build_array(6, 3.0)
    src = VirtualSource(white_noise(0.1, RATE, seed=8),
                        Position2D.from_polar(100.0, 3.0))
    bank = ReceiverBank(arr, hrir_set, CENTER, CHANNELS_LOCALIZATION)
    fast = render_source(ReproductionMethod.VBAP, bank, src)
    feeds = render_speaker_feeds(ReproductionMethod.VBAP, arr, src, RATE)
    slow = render_to_receiver(feeds, bank)
    n = min(fast.samples.shape[1], slow.samples.shape[1])
    scale = np.abs(slow.samples).max()
    assert np.abs(fast.samples[:, :n] - slow.samples[:, :n]).max() < 1e-9 * scale


def test_reference_frontal_symmetry(hrir_set):
    src = VirtualSource(white_noise(0.1, RATE, seed=1),
                        Position2D.from_polar(0.0, 3.0))
    ref = render_reference(src, hrir_set, CENTER, CHANNELS_LOCALIZATION)
    scale = np.abs(ref.samples).max()
    assert np.abs(ref.samples[0] - ref.samples[1]).max() < 1e-6 * scale


def test_reference_distance_gain(hrir_set):
    sig = white_noise(0.1, RATE, seed=2)
    near = render_reference(VirtualSource(sig, Position2D.from_polar(30.0, 1.5)),
                            hrir_set, CENTER, CHANNELS_LOCALIZATION)
    far = render_reference(VirtualSource(sig, Position2D.from_polar(30.0, 3.0)),
                           hrir_set, CENTER, CHANNELS_LOCALIZATION)
    ratio = (np.sqrt(np.mean(near.samples[0] ** 2))
             / np.sqrt(np.mean(far.samples[0] ** 2)))
    assert ratio == pytest.approx(2.0, rel=0.01)


def test_rendering_linearity(hrir_set):
    arr = build_array(8, 3.0)
    bank = ReceiverBank(arr, hrir_set, ListenerPose.lateral(0.1),
                        CHANNELS_LOCALIZATION)
    x = white_noise(0.1, RATE, seed=5)
    y = white_noise(0.1, RATE, seed=6)
    pos = Position2D.from_polar(70.0, 3.0)
    mixed = render_source(ReproductionMethod.HOA, bank,
                          VirtualSource(2.0 * x + 0.5 * y, pos))
    parts = (2.0 * render_source(ReproductionMethod.HOA, bank,
                                 VirtualSource(x, pos)).samples
             + 0.5 * render_source(ReproductionMethod.HOA, bank,
                                   VirtualSource(y, pos)).samples)
    scale = np.abs(mixed.samples).max()
    assert np.abs(mixed.samples - parts).max() < 1e-6 * scale


def _tiny_scene(duration=0.25, snr=0.0, n_noise=2):
    target = VirtualSource(speech_shaped_noise(duration, RATE, seed=21),
                           Position2D.from_polar(0.0, 3.0))
    noises = tuple(
        VirtualSource(speech_shaped_noise(duration, RATE, seed=30 + i),
                      Position2D.from_polar(60.0 + 120.0 * i, 2.0))
        for i in range(n_noise))
    return SceneSpec(target=target, noises=noises, nominal_input_snr=snr)


def test_mix_scene_additivity_and_calibration(hrir_set):
    out = mix_scene(_tiny_scene(snr=0.0), None, None, hrir_set, CENTER,
                    CHANNELS_LOCALIZATION)
    s = out.mixture.samples
    resid = s - (out.target_only.samples + out.noise_only.samples)
    assert np.abs(resid).max() < 1e-6 * np.abs(s).max()
    cal = out.channels.index("in_ear_L")
    snr = 10.0 * np.log10(np.mean(out.target_only.samples[cal] ** 2)
                          / np.mean(out.noise_only.samples[cal] ** 2))
    assert snr == pytest.approx(0.0, abs=0.01)


def test_calibrate_stems_scaling(hrir_set):
    stems = render_scene_stems(_tiny_scene(), None, None, hrir_set, CENTER,
                               CHANNELS_LOCALIZATION)
    lo = calibrate_stems(stems, 0.0)
    hi = calibrate_stems(stems, 20.0)
    ratio = hi.metadata["noise_scale"] / lo.metadata["noise_scale"]
    assert ratio == pytest.approx(10.0 ** (-1.0), rel=1e-9)
    assert np.array_equal(hi.target_only.samples, lo.target_only.samples)


def test_calibrate_rejects_silent_stem(hrir_set):
    stems = render_scene_stems(_tiny_scene(n_noise=0), None, None, hrir_set,
                               CENTER, CHANNELS_LOCALIZATION)
    with pytest.raises(ValueError):
        calibrate_stems(stems, 0.0)


def test_select_channels(hrir_set):
    stems = render_scene_stems(_tiny_scene(), None, None, hrir_set, CENTER,
                               ("in_ear_L", "in_ear_R"))
    sub = select_channels(stems, ("in_ear_R",))
    assert sub.channels == ("in_ear_R",)
    assert np.array_equal(sub.mixture.samples[0], stems.mixture.samples[1])
    assert sub.metadata["target_power"] == stems.metadata["target_power"]


def test_time_invariance(hrir_set):
    arr = build_array(8, 3.0)
    bank = ReceiverBank(arr, hrir_set, CENTER, CHANNELS_LOCALIZATION)
    x = white_noise(0.05, RATE, seed=13)
    shift = 100
    pos = Position2D.from_polar(42.0, 3.0)
    a = render_source(ReproductionMethod.VBAP, bank, VirtualSource(x, pos))
    b = render_source(ReproductionMethod.VBAP, bank,
                      VirtualSource(np.concatenate([np.zeros(shift), x]), pos))
    n = a.samples.shape[1] - shift
    scale = np.abs(a.samples).max()
    assert np.abs(b.samples[:, shift:shift + n]
                  - a.samples[:, :n]).max() < 1e-9 * scale
