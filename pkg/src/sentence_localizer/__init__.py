"""
Temporal sentence localization in video with co-attention and location regression

Built on a small numpy reverse-mode autodiff tape. Submodules are imported
on demand so that `python -m sentence_localizer --threads 1` can pin BLAS
threads before numpy loads.
"""

__version__ = "1.0.0"
__all__ = [
    "autodiff",
    "gradient_checker",
    "encoders",
    "coattention",
    "heads",
    "losses",
    "model",
    "optimizer",
    "corpus",
    "synthetic",
    "metrics",
    "checkpoint",
    "trainer",
    "baseline",
    "benchmark",
    "config_loader",
    "manifest_generator",
    "artifact_hasher",
    "logging_setup",
    "cli",
]
