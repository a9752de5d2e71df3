"""Differentiable neural voxel rendering: reference shaders, a RenderNet-style
network with a learned projection unit, shape/texture priors and MAP inverse
rendering."""

__version__ = "0.1.0"
