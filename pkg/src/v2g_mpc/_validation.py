"""Input validation helpers shared by the estimators and the plain functions."""

import numpy as np


def check_matrix(M, name="M", *, square=False, allow_empty=False):
    """Return ``M`` as a finite 2-D float array or raise ``ValueError``."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {M.shape}")
    if not allow_empty and M.size == 0:
        raise ValueError(f"{name} is empty")
    if square and M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def check_vector(v, size=None, name="v"):
    """Return ``v`` as a finite 1-D float array, optionally of fixed length."""
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    elif v.ndim == 2 and 1 in v.shape:
        v = v.ravel()
    if v.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {v.shape}")
    if size is not None and v.shape[0] != size:
        raise ValueError(f"{name} must have {size} entries, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return value


def check_signal(signal, name="signal"):
    """Sampled waveform: finite 1-D float array with at least two samples."""
    signal = np.asarray(signal, dtype=float)
    if signal.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {signal.shape}")
    if signal.shape[0] < 2:
        raise ValueError(f"{name} needs at least two samples")
    if not np.all(np.isfinite(signal)):
        raise ValueError(f"{name} contains non-finite samples")
    return signal
