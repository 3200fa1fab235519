"""Ground-truth data generation: simulated camera developments, a synthetic
image source with upsampling artifacts, JPEG compression, and dataset
manifests."""

from .camera import CameraProfile, default_profiles, simulate_camera
from .manifest import DatasetManifest, ManifestEntry, build_manifest
from .scenes import render_scene
from .synthetic import GanSurrogateConfig, make_synthetic
from ..jpegcodec import jpeg_roundtrip

__all__ = [
    "CameraProfile",
    "DatasetManifest",
    "ManifestEntry",
    "GanSurrogateConfig",
    "build_manifest",
    "default_profiles",
    "jpeg_roundtrip",
    "make_synthetic",
    "render_scene",
    "simulate_camera",
]
