from .builders import build_microscopy_unet, build_mri_unet, build_variant, describe
from .checkpoint import CheckpointError, load_params, read_header, save_params
from .graph import (
    ConvParams,
    LayerSpec,
    NetworkGraph,
    backward,
    clone_params,
    forward,
    graph_hash,
    set_params,
    walk_shapes,
)

__all__ = [
    "ConvParams",
    "LayerSpec",
    "NetworkGraph",
    "CheckpointError",
    "backward",
    "build_microscopy_unet",
    "build_mri_unet",
    "build_variant",
    "clone_params",
    "describe",
    "forward",
    "graph_hash",
    "load_params",
    "read_header",
    "save_params",
    "set_params",
    "walk_shapes",
]
