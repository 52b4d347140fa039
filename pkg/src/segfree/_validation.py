"""Small input-validation helpers used across estimators and sessions."""

import numbers

import numpy as np

from .exceptions import ConfigurationError


def check_tokens(tokens, name="tokens", allow_empty=True):
    """Return ``tokens`` as a list of strings.

    A whitespace-delimited string is split; any other iterable must yield
    non-empty strings.
    """
    if isinstance(tokens, str):
        tokens = tokens.split()
    out = []
    for tok in tokens:
        surface = getattr(tok, "surface", tok)
        if not isinstance(surface, str) or not surface:
            raise ConfigurationError(f"{name} must contain non-empty strings, got {surface!r}")
        out.append(surface)
    if not allow_empty and not out:
        raise ConfigurationError(f"{name} must not be empty")
    return out


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ConfigurationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_positive_float(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigurationError(f"{name} must be a real number, got {value!r}")
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ConfigurationError(f"{name} must be finite and > 0, got {value!r}")
    return value


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_boundaries(boundaries, length=None, name="boundaries"):
    """Validate a strictly increasing list of 1-based segment end positions."""
    out = [int(b) for b in boundaries]
    prev = 0
    for b in out:
        if b <= prev:
            raise ConfigurationError(f"{name} must be strictly increasing and >= 1: {out}")
        prev = b
    if length is not None and out and out[-1] > length:
        raise ConfigurationError(f"{name} reach {out[-1]} beyond stream length {length}")
    return out
