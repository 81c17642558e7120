"""Residual-network lesion segmentation and classification on a numpy autodiff engine."""

__version__ = "0.1.0"
