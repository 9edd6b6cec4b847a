"""
Coherence traces: a time grid with x/y (or magnitude-only) readout channels.
"""
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _frozen_array(values) -> np.ndarray:
    array = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    array.setflags(write=False)
    return array


class Normalization(BaseModel):
    """
    Affine calibration from stored channel values to raw readout: raw = offset + scale * value.

    The map is carried as metadata only; the stored channels are what models are fitted to.
    """

    model_config = ConfigDict(frozen=True)

    scale: float = Field(default=1.0, gt=0)
    offset: float = 0.0


class CoherenceTrace(BaseModel):
    """
    A measured or simulated Ramsey record.

    Attributes:
        times: Strictly increasing time grid in us.
        x_channel: Readout values rotated back around x (or the magnitude r for magnitude-only data).
        y_channel: Readout values rotated back around y, None for magnitude-only data.
        normalization: Affine map back to raw readout units.
        phi: Mixing angle label in radians, if any.
        seed: Seed of the generator that produced the trace, if synthetic.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    times: np.ndarray
    x_channel: np.ndarray
    y_channel: Optional[np.ndarray] = None
    normalization: Normalization = Normalization()
    phi: Optional[float] = None
    seed: Optional[int] = None

    @field_validator("times", "x_channel", mode="before")
    @classmethod
    def _to_array(cls, value) -> np.ndarray:
        return _frozen_array(value)

    @field_validator("y_channel", mode="before")
    @classmethod
    def _to_optional_array(cls, value) -> Optional[np.ndarray]:
        if value is None:
            return None
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check_shape(self) -> "CoherenceTrace":
        n = self.times.size
        if n == 0:
            raise ValueError("a trace needs at least one time point")
        if not np.all(np.isfinite(self.times)):
            raise ValueError("times must be finite")
        steps = np.diff(self.times)
        if np.any(steps <= 0):
            index = int(np.argmax(steps <= 0)) + 1
            raise ValueError(f"times must be strictly increasing (violated at index {index})")
        if self.x_channel.size != n:
            raise ValueError(f"x channel has {self.x_channel.size} values for {n} times")
        if self.y_channel is not None and self.y_channel.size != n:
            raise ValueError(f"y channel has {self.y_channel.size} values for {n} times")
        for name, channel in (("x", self.x_channel), ("y", self.y_channel)):
            if channel is None:
                continue
            bad = ~np.isfinite(channel)
            if bad.any():
                row = int(np.argmax(bad))
                raise ValueError(f"{name} channel value {channel[row]} at row {row} is not finite")
        return self

    def __len__(self) -> int:
        return int(self.times.size)

    @property
    def has_quadratures(self) -> bool:
        return self.y_channel is not None

    @property
    def magnitude(self) -> np.ndarray:
        """|x + iy| for quadrature data, the x channel itself for magnitude-only data."""
        if self.y_channel is None:
            return self.x_channel
        return np.hypot(self.x_channel, self.y_channel)

    def rescaled(self, factor: float) -> "CoherenceTrace":
        """
        Divide the channels by factor, keeping the raw-readout map unchanged.

        Dividing a contrast-scaled trace by C(phi) yields full-coherence units, where r(0) = 1.
        """
        if factor <= 0:
            raise ValueError(f"rescaling factor must be positive, got {factor}")
        return self.model_copy(
            update={
                "x_channel": _frozen_array(self.x_channel / factor),
                "y_channel": None if self.y_channel is None else _frozen_array(self.y_channel / factor),
                "normalization": Normalization(
                    scale=self.normalization.scale * factor, offset=self.normalization.offset
                ),
            }
        )

    def raw(self) -> np.ndarray:
        """Magnitude mapped back to raw readout units."""
        return self.normalization.offset + self.normalization.scale * self.magnitude
