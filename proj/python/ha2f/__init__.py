"""HA2F change detection: siamese hierarchical aggregation over bi-temporal pairs."""

from ._core import (
    Model,
    poly_lr,
    render_error_map,
    scores,
    synth_pair,
    warp,
)

__all__ = [
    "Model",
    "poly_lr",
    "render_error_map",
    "scores",
    "synth_pair",
    "warp",
]
