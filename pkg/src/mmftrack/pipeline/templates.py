"""Template-generation strategies over the tracking history."""

from __future__ import annotations

from typing import Callable, Sequence

from ..alignment import TEMPLATE_RAW_CAP, CropSource, TemplateData, finalize_template
from ..geometry import GridSpec
from .config import STRATEGIES


def template_frames(strategy: str, n_history: int) -> list[int]:
    """History indices (0 = first frame) feeding the template for the next frame."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown template strategy {strategy!r}")
    if n_history < 1:
        raise ValueError("template history is empty")
    last = n_history - 1
    if strategy == "first-gt":
        return [0]
    if strategy == "prev":
        return [last]
    if strategy == "first-gt+prev":
        return [0] if last == 0 else [0, last]
    return list(range(n_history))


def make_template(
    strategy: str,
    history: Sequence,
    grid: GridSpec,
    n_points: int,
    seed: int,
    source: Callable[[int], CropSource] | None = None,
) -> TemplateData:
    """Build the template from ``history`` (one ``CropSource`` per past frame).

    ``source``, if given, produces the crop for a history index lazily so callers
    can cache crops instead of materialising all of them.
    """
    frames = template_frames(strategy, len(history))
    get = source if source is not None else (lambda i: history[i])
    sources = [get(i) for i in frames]
    cap = TEMPLATE_RAW_CAP if strategy == "all-prev" else None
    return finalize_template(sources, grid, n_points, seed, raw_cap=cap)
