"""Per-pixel float grids with validity masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VARIANCE_FLOOR = 1e-12


@dataclass
class DepthMap:
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool) & np.isfinite(self.values)
        if self.values.ndim != 2 or self.values.shape != self.valid.shape:
            raise ValueError("values and valid must be matching 2-D arrays")
        self._check()

    def _check(self):
        if np.any(self.values[self.valid] <= 0):
            raise ValueError("depth must be positive on valid pixels")

    @classmethod
    def from_array(cls, values) -> "DepthMap":
        """Valid wherever the value is finite (NaN marks invalid)."""
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.isfinite(values))

    def to_array(self) -> np.ndarray:
        return np.where(self.valid, self.values, np.nan)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def copy(self):
        return type(self)(self.values.copy(), self.valid.copy())


class VarianceMap(DepthMap):
    def _check(self):
        if np.any(self.values[self.valid] < 0):
            raise ValueError("variance must be non-negative on valid pixels")
