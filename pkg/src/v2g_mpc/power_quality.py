"""Harmonic analysis, total harmonic distortion and frequency estimation.

Harmonics are measured by projecting the waveform onto sine/cosine pairs at
exact multiples of the fundamental over a whole number of fundamental
periods, so no window function is needed and leakage stays at rounding level.
"""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_positive, check_signal

__all__ = [
    "ThdReport",
    "UndefinedThdError",
    "harmonic_spectrum",
    "thd_percent",
    "estimate_frequency",
    "refine_frequency",
    "improvement_percent",
    "analyze_signal",
    "HarmonicAnalyzer",
]

MIN_PERIODS = 5
DEFAULT_N_MAX = 50
# Below this relative departure from the hint the estimate is treated as
# equal to it; the zero-crossing estimator is not more precise than that.
_REFINE_RESOLUTION = 1e-6


class UndefinedThdError(ValueError):
    """The fundamental amplitude is zero, so THD has no meaning."""


@dataclass(frozen=True)
class ThdReport:
    signal_name: str
    fundamental_frequency: float
    fundamental_amplitude: float
    harmonic_amplitudes: np.ndarray  # index 0 holds harmonic 2
    thd_percent: float

    def as_dict(self):
        return {
            "thd_percent": self.thd_percent,
            "frequency": self.fundamental_frequency,
            "fundamental": self.fundamental_amplitude,
            "harmonics": [float(a) for a in self.harmonic_amplitudes],
        }


def _whole_periods(n_samples, sample_rate, f0):
    per_period = sample_rate / f0
    periods = int(math.floor(n_samples / per_period + 1e-9))
    return periods, min(n_samples, int(round(periods * per_period)))


def harmonic_spectrum(signal, sample_rate, f0, n_max=DEFAULT_N_MAX):
    """Amplitudes of harmonics 1..n_max.

    The leading whole number of fundamental periods is used.

    Returns
    -------
    (n_max,) ndarray
        ``A[h-1]`` is the peak amplitude of harmonic ``h``.
    """
    signal = check_signal(signal)
    sample_rate = check_positive(sample_rate, "sample_rate")
    f0 = check_positive(f0, "f0")
    n_max = int(n_max)
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if n_max * f0 >= sample_rate / 2:
        raise ValueError(
            f"harmonic {n_max} at {n_max * f0:g} Hz is not below Nyquist ({sample_rate / 2:g} Hz)"
        )
    periods, n_use = _whole_periods(signal.shape[0], sample_rate, f0)
    if periods < MIN_PERIODS:
        raise ValueError(
            f"signal spans {signal.shape[0] * f0 / sample_rate:.6g} periods; need at least {MIN_PERIODS}"
        )
    s = signal[:n_use]
    theta = 2.0 * np.pi * f0 / sample_rate * np.arange(n_use)
    base = np.exp(-1j * theta)
    z = np.ones(n_use, dtype=complex)
    amps = np.empty(n_max)
    for h in range(n_max):
        # recompute every 16 harmonics to keep the product recurrence tight
        z = np.exp(-1j * (h + 1) * theta) if h % 16 == 0 else z * base
        amps[h] = 2.0 * abs(np.dot(s, z)) / n_use
    return amps


def estimate_frequency(signal, sample_rate):
    """Fundamental frequency from linearly interpolated rising zero crossings.

    Crossings are debounced with a hysteresis band of 10 % of the peak so that
    measurement noise does not produce spurious crossings.
    """
    signal = check_signal(signal)
    sample_rate = check_positive(sample_rate, "sample_rate")
    s = signal - signal.mean()
    band = 0.1 * np.max(np.abs(s))
    if band == 0:
        raise ValueError("signal is constant; no zero crossings")
    regime = np.where(s > band, 1, np.where(s < -band, -1, 0))
    idx = np.flatnonzero(regime)
    if idx.size < 2:
        raise ValueError("insufficient zero crossings")
    levels = regime[idx]
    rises = idx[1:][(levels[:-1] == -1) & (levels[1:] == 1)]
    if rises.size < 2:
        raise ValueError("insufficient zero crossings: need at least two rising crossings")
    n = np.arange(s.shape[0])
    last_negative = np.maximum.accumulate(np.where(s < 0, n, -1))
    i = last_negative[rises]
    frac = s[i] / (s[i] - s[i + 1])
    crossings = i + frac
    period = (crossings[-1] - crossings[0]) / (crossings.size - 1)
    return float(sample_rate / period)


def refine_frequency(signal, sample_rate, f0_hint):
    """Refine ``f0_hint`` with :func:`estimate_frequency` on a boxcar-smoothed copy.

    The smoothing spans a twentieth of the hinted period and removes PWM
    ripple. Falls back to the hint when no usable crossings exist or the
    estimate strays more than 5 % from it.
    """
    signal = check_signal(signal)
    width = max(1, int(round(sample_rate / (20.0 * f0_hint))))
    smooth = np.convolve(signal, np.full(width, 1.0 / width), mode="valid") if width > 1 else signal
    try:
        f = estimate_frequency(smooth, sample_rate)
    except ValueError:
        return float(f0_hint)
    if abs(f - f0_hint) > 0.05 * f0_hint or abs(f - f0_hint) <= _REFINE_RESOLUTION * f0_hint:
        return float(f0_hint)
    return f


def analyze_signal(signal, sample_rate, f0_hint, n_max=DEFAULT_N_MAX, name="signal", refine=True):
    """Full :class:`ThdReport` for one waveform."""
    signal = check_signal(signal, name)
    f0 = refine_frequency(signal, sample_rate, f0_hint) if refine else float(f0_hint)
    amps = harmonic_spectrum(signal, sample_rate, f0, n_max)
    a1 = amps[0]
    if a1 <= np.finfo(float).tiny or a1 <= 1e-12 * np.max(np.abs(signal)):
        raise UndefinedThdError(f"{name}: fundamental amplitude is zero; THD undefined")
    thd = 100.0 * math.sqrt(float(np.sum(amps[1:] ** 2))) / a1
    return ThdReport(
        signal_name=name,
        fundamental_frequency=f0,
        fundamental_amplitude=float(a1),
        harmonic_amplitudes=amps[1:],
        thd_percent=thd,
    )


def thd_percent(signal, sample_rate, f0_hint, n_max=DEFAULT_N_MAX, refine=True):
    """Total harmonic distortion in percent, harmonics 2..n_max over the fundamental."""
    return analyze_signal(signal, sample_rate, f0_hint, n_max, refine=refine).thd_percent


def improvement_percent(thd_without, thd_with):
    """Relative THD reduction, ``100 (without - with) / without``."""
    thd_without, thd_with = float(thd_without), float(thd_with)
    if not thd_without > 0:
        raise ValueError(f"baseline THD must be positive, got {thd_without!r}")
    return 100.0 * (thd_without - thd_with) / thd_without


class HarmonicAnalyzer(BaseEstimator, TransformerMixin):
    """Per-channel harmonic analysis in transformer form.

    ``X`` holds one waveform per column. ``fit`` settles the fundamental of
    every channel; ``transform`` returns a ``(n_channels, n_max)`` amplitude
    table.
    """

    def __init__(self, sample_rate=1e6, f0=50.0, n_max=DEFAULT_N_MAX, refine=True):
        self.sample_rate = sample_rate
        self.f0 = f0
        self.n_max = n_max
        self.refine = refine

    @staticmethod
    def _columns(X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise ValueError("X must be 1-D or 2-D (samples x channels)")
        return X

    def fit(self, X, y=None):
        X = self._columns(X)
        if self.refine:
            f = [refine_frequency(X[:, j], self.sample_rate, self.f0) for j in range(X.shape[1])]
        else:
            f = [float(self.f0)] * X.shape[1]
        self.fundamental_frequency_ = np.asarray(f)
        self.n_channels_ = X.shape[1]
        return self

    def transform(self, X):
        if not hasattr(self, "fundamental_frequency_"):
            raise RuntimeError("HarmonicAnalyzer is not fitted")
        X = self._columns(X)
        if X.shape[1] != self.n_channels_:
            raise ValueError(f"expected {self.n_channels_} channels, got {X.shape[1]}")
        return np.vstack([
            harmonic_spectrum(X[:, j], self.sample_rate, self.fundamental_frequency_[j], self.n_max)
            for j in range(X.shape[1])
        ])

    def thd(self, X):
        amps = self.transform(X)
        if np.any(amps[:, 0] <= 0):
            raise UndefinedThdError("a channel has zero fundamental amplitude")
        return 100.0 * np.sqrt(np.sum(amps[:, 1:] ** 2, axis=1)) / amps[:, 0]
