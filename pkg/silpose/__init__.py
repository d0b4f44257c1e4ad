"""Multi-camera silhouette-based orientation tracking of anisotropic particles."""

__version__ = "0.1.0"
