"""Shared signal-processing primitives: fractional delay, convolution, band power."""

from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

FRACTIONAL_DELAY_TAPS = 64


def fractional_delay_fir(delay_samples: float,
                         taps: int = FRACTIONAL_DELAY_TAPS) -> tuple:
    """Windowed-sinc fractional delay filter.

    Returns (offset, h): convolving a signal with `h` and placing the result
    at sample `offset` delays it by `delay_samples`. An integer delay yields
    an exact unit impulse (sinc hits the tap grid).
    """
    n0 = int(np.floor(delay_samples)) - taps // 2 + 1
    n = n0 + np.arange(taps)
    arg = delay_samples - n
    h = np.sinc(arg)
    # Hann window centered on the delay; width spans the tap support.
    w = 0.5 + 0.5 * np.cos(np.pi * arg / (taps // 2))
    h *= np.where(np.abs(arg) <= taps // 2, w, 0.0)
    return n0, h


def delay_signal(x: np.ndarray, delay_samples: float,
                 out_len: int | None = None,
                 taps: int = FRACTIONAL_DELAY_TAPS) -> np.ndarray:
    """Delay `x` by a possibly fractional number of samples.

    Negative delays shift earlier; samples pushed before t=0 are dropped.
    Output length defaults to len(x) plus the delay (rounded up).
    """
    x = np.asarray(x, dtype=float)
    n0, h = fractional_delay_fir(delay_samples, taps)
    y = fftconvolve(x, h)
    if out_len is None:
        out_len = len(x) + max(0, int(np.ceil(delay_samples)))
    out = np.zeros(out_len)
    start = n0
    src0 = max(0, -start)
    dst0 = max(0, start)
    n_copy = min(len(y) - src0, out_len - dst0)
    if n_copy > 0:
        out[dst0:dst0 + n_copy] = y[src0:src0 + n_copy]
    return out


def delay_spectrum(freqs: np.ndarray, delay_samples: float,
                   taps: int = FRACTIONAL_DELAY_TAPS) -> np.ndarray:
    """Frequency response of the fractional delay filter on a normalized grid.

    `freqs` are in cycles/sample (0 to 0.5 for an rfft grid).
    """
    n0, h = fractional_delay_fir(delay_samples, taps)
    n = n0 + np.arange(taps)
    return np.exp(-2j * np.pi * np.outer(freqs, n)) @ h


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def power_db(x: np.ndarray, floor: float = 1e-30) -> float:
    return 10.0 * np.log10(max(float(np.mean(np.square(x))), floor))


def next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()
