"""Causal proposal -> tracking -> segmentation cascade for video object segmentation.

The three stages live in :mod:`opn`, :mod:`otn` and :mod:`drsn`; concrete
appearance models in :mod:`backends`; metrics in :mod:`evaluation`; dataset
I/O and the synthetic generator in :mod:`io` and :mod:`synth`; the driver in
:mod:`pipeline` and the command line in :mod:`cli`.
"""
from .geometry import BoundingBox, GaussianSampleConfig, iou
from .pipeline import PipelineConfig, run_dataset, run_sequence

__all__ = ["BoundingBox", "GaussianSampleConfig", "iou", "PipelineConfig",
           "run_dataset", "run_sequence"]
__version__ = "0.1.0"
