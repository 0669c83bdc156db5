"""Single-view depth-map to surface reconstruction toolkit."""

from d2s.depth_core import (
    CameraExtrinsics,
    CameraIntrinsics,
    DepthMap,
    allocate_budget,
    depth_gradients,
    depth_stats,
    detect_boundaries,
    detect_keypoints,
    generate_fixture,
    load_depth_map,
    median_filter,
)

__version__ = "0.1.0"

__all__ = [
    "CameraExtrinsics",
    "CameraIntrinsics",
    "DepthMap",
    "allocate_budget",
    "depth_gradients",
    "depth_stats",
    "detect_boundaries",
    "detect_keypoints",
    "generate_fixture",
    "load_depth_map",
    "median_filter",
]
