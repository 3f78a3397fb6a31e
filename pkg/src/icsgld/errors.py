"""Exception types shared across the package."""

from __future__ import annotations

import numpy as np


class InputError(ValueError):
    """Invalid argument: wrong dimension, NaN energy, empty index list, ..."""


class StateError(RuntimeError):
    """An operation was called on an object that is not ready for it."""


class NumericalError(FloatingPointError):
    """A sampler produced a non-finite quantity.

    ``position`` holds a copy of the chain position at the moment of failure
    and ``iteration`` the chain's step counter.
    """

    def __init__(self, message: str, position=None, iteration: int | None = None):
        super().__init__(message)
        self.position = None if position is None else np.array(position, copy=True)
        self.iteration = iteration


class ConfigError(ValueError):
    """Configuration problem; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
