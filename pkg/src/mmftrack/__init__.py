"""Camera/LiDAR fusion tracker for single 3D objects, in plain numpy."""

__version__ = "0.1.0"
