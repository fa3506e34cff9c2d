"""Residual animation codec: keypoint-animated prediction with closed-loop
temporal residual coding, PPM entropy coding and an RD evaluation harness."""

__version__ = "0.1.0"
