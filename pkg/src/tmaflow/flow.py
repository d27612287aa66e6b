"""Dense displacement fields."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class FlowField:
    """``values`` is ``2 x H x W`` (x-component first); ``valid`` is ``H x W`` bool."""

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.ndim != 3 or self.values.shape[0] != 2:
            raise ValueError(f"flow values must be 2 x H x W, got {self.values.shape}")
        if self.valid.shape != self.values.shape[1:]:
            raise ValueError("valid mask shape does not match flow")

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @classmethod
    def constant(cls, u: float, v: float, height: int, width: int, valid=None) -> "FlowField":
        vals = np.empty((2, height, width), dtype=np.float32)
        vals[0], vals[1] = u, v
        if valid is None:
            valid = np.ones((height, width), dtype=bool)
        return cls(vals, valid)
