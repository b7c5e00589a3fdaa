"""Axis-aligned pixel boxes with inclusive bounds."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import BoundsError


@dataclass(frozen=True)
class BBox:
    """Inclusive pixel rectangle: both corners are part of the box."""

    row_min: int
    col_min: int
    row_max: int
    col_max: int

    def __post_init__(self):
        if self.row_min < 0 or self.col_min < 0:
            raise BoundsError(f"negative box corner: {self}")
        if self.row_min > self.row_max or self.col_min > self.col_max:
            raise BoundsError(f"inverted box: {self}")

    @property
    def height(self) -> int:
        return self.row_max - self.row_min + 1

    @property
    def width(self) -> int:
        return self.col_max - self.col_min + 1

    @property
    def area(self) -> int:
        return self.height * self.width

    def shift(self, dr: int, dc: int) -> "BBox":
        return BBox(self.row_min + dr, self.col_min + dc,
                    self.row_max + dr, self.col_max + dc)

    def within(self, height: int, width: int) -> bool:
        return self.row_max < height and self.col_max < width

    def check_within(self, height: int, width: int) -> None:
        if not self.within(height, width):
            raise BoundsError(f"box {self} exceeds {height}x{width} bounds")
