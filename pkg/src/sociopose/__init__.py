"""Pose-feature encoding benchmark: 3D social pose features, ridge and
grouped-ridge encoding of behavioral ratings, permutation statistics."""

__version__ = "0.1.0"
