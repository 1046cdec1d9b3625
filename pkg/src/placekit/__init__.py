"""placekit: monocular video reconstruction and 3D object insertion.

Library layout:

- ``geometry``   pinhole cameras, rigid transforms, projection
- ``flow``       optical-flow fields, PAFW files, keyframe selection
- ``scba``       self-calibrating weighted bundle adjustment
- ``depth``      dense depth maps, PFM files, depth propagation
- ``splat``      Gaussian-splat assets -> textured meshes
- ``placement``  region back-projection, RANSAC planes, object placement
- ``render``     software rasterizer and depth-aware compositing
- ``pipeline``   project store, reconstruction/render commands
- ``service``    HTTP API around the pipeline
"""

from placekit.geometry import Intrinsics, Pose

__all__ = ["Intrinsics", "Pose"]
__version__ = "0.1.0"
