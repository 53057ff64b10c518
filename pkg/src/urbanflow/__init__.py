"""urbanflow: learned surrogate for pedestrian-level urban wind fields.

Pipeline: sample square layouts from a building-footprint city model,
rasterize them to height grids, generate ground-truth velocity fields with
a built-in 2D steady-flow solver, train per-component U-Net surrogates,
and serve sub-second predictions plus wind-comfort masks over a CLI and a
small HTTP service.
"""

__version__ = "0.1.0"
