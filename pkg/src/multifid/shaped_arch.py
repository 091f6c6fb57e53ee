"""Layer-width computation for shaped (funnel) MLPs and shaped ResNets.

Widths interpolate linearly from a maximum width down to the output width,
computed in exact rational arithmetic and rounded half-up, with both
endpoints pinned exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

__all__ = ["FunnelShape", "funnel_widths", "resnet_group_widths", "ResnetWidths"]


@dataclass(frozen=True)
class FunnelShape:
    n_max: int
    n_layers: int
    n_out: int

    def __post_init__(self) -> None:
        if self.n_max <= 0 or self.n_layers <= 0 or self.n_out <= 0:
            raise ValueError("shape parameters must be strictly positive")
        if self.n_layers >= 2 and self.n_max < self.n_out:
            raise ValueError(
                f"n_max={self.n_max} < n_out={self.n_out} would give increasing widths")


def _round_half_up(x: Fraction) -> int:
    from math import floor
    return floor(x + Fraction(1, 2))


def funnel_widths(shape: FunnelShape) -> list[int]:
    """Per-layer widths: n_max down to n_out in equal (rational) steps.

    A single layer returns [n_max] (the interpolation step is undefined).
    """
    if shape.n_layers == 1:
        return [shape.n_max]
    step = Fraction(shape.n_max - shape.n_out, shape.n_layers - 1)
    widths = []
    for i in range(shape.n_layers):
        exact = Fraction(shape.n_max) - i * step
        widths.append(max(1, _round_half_up(exact)))
    widths[0] = shape.n_max
    widths[-1] = shape.n_out
    return widths


@dataclass(frozen=True)
class ResnetWidths:
    group_widths: list[int]
    block_widths: list[int]


def resnet_group_widths(n_max: int, n_groups: int, blocks_per_group: int,
                        n_out: int) -> ResnetWidths:
    """Group output widths via the funnel rule; blocks replicate their group."""
    if blocks_per_group <= 0:
        raise ValueError("blocks_per_group must be strictly positive")
    groups = funnel_widths(FunnelShape(n_max=n_max, n_layers=n_groups, n_out=n_out))
    blocks = [w for w in groups for _ in range(blocks_per_group)]
    return ResnetWidths(group_widths=groups, block_widths=blocks)
