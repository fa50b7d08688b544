from .manifest import (
    ManifestError,
    StackManifest,
    load_manifests,
    load_stack,
    make_splits,
    save_manifests,
    save_stack,
)
from .npyio import NpyFormatError, array_from_bytes, array_to_bytes, read_array, write_array
from .phantom import PhantomSpec, generate_phantom_stack, with_plane_noise
from .preprocess import (
    DegenerateImageError,
    preprocess_microscopy,
    preprocess_mri,
    scale_plane_unit_interval,
)
from .tiffio import TiffFormatError, read_tiff_gray, write_tiff_gray

__all__ = [
    "DegenerateImageError",
    "ManifestError",
    "NpyFormatError",
    "PhantomSpec",
    "StackManifest",
    "TiffFormatError",
    "array_from_bytes",
    "array_to_bytes",
    "generate_phantom_stack",
    "load_manifests",
    "load_stack",
    "make_splits",
    "preprocess_microscopy",
    "preprocess_mri",
    "read_array",
    "read_tiff_gray",
    "save_manifests",
    "save_stack",
    "scale_plane_unit_interval",
    "with_plane_noise",
    "write_array",
    "write_tiff_gray",
]
