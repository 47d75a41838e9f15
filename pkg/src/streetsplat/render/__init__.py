"""Differentiable 3D Gaussian splatting."""

from streetsplat.render.rasterizer import (
    TILE,
    GaussianSet,
    Projected2DGaussian,
    RenderOutput,
    project_gaussian,
    render,
    render_backward,
    render_reference,
    render_torch,
)

__all__ = [
    "TILE",
    "GaussianSet",
    "Projected2DGaussian",
    "RenderOutput",
    "project_gaussian",
    "render",
    "render_backward",
    "render_reference",
    "render_torch",
]
