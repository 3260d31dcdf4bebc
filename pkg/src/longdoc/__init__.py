"""Long-document layout encoder toolkit: efficient attention kernels, 2D
relative bias, a numpy encoder with BIESO tagging, and benchmarking tools."""

__version__ = "0.1.0"
