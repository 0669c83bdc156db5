"""Mesh construction from depth maps and point clouds."""

from d2s.meshing.ballpivot import ball_pivot, region_radii
from d2s.meshing.delaunay import DelaunayError, delaunay_triangles
from d2s.meshing.mls import mls_smooth
from d2s.meshing.select import (
    MESH_ALGORITHMS,
    MeshAlgoChoice,
    MeshingParams,
    SelectorConfig,
    default_params,
    density_cv,
    median_spacing,
    run_meshing,
    select_mesh_algorithm,
)
from d2s.meshing.triangulate import alpha_shape, delaunay_2_5d, grid_mesh

__all__ = [
    "MESH_ALGORITHMS",
    "DelaunayError",
    "MeshAlgoChoice",
    "MeshingParams",
    "SelectorConfig",
    "alpha_shape",
    "ball_pivot",
    "default_params",
    "delaunay_2_5d",
    "delaunay_triangles",
    "density_cv",
    "grid_mesh",
    "median_spacing",
    "mls_smooth",
    "region_radii",
    "run_meshing",
    "select_mesh_algorithm",
]
