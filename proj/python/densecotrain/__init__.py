"""Co-training semi-supervised dense object detection.

Geometry and metrics take plain tuples; the pipeline entry points take the
same JSON-shaped config documents as the command-line tool.
"""

import json

from ._core import (
    IoError,
    RuntimeFailure,
    ValidationError,
    __version__,
    average_precision,
    brute_force_ap_oracle,
    fuse,
    iou,
    nms,
    split_sizes,
)
from . import _core

__all__ = [
    "IoError",
    "RuntimeFailure",
    "ValidationError",
    "__version__",
    "average_precision",
    "brute_force_ap_oracle",
    "evaluate",
    "fuse",
    "generate_synthetic",
    "iou",
    "nms",
    "run_cotraining",
    "split_sizes",
    "tune",
]


def evaluate(images, max_dets=300):
    """mAP, AP per threshold, AP.75, AR@max_dets and PR curves as a dict.

    Each image is {"detections": [(x1, y1, x2, y2, score[, label])],
    "truths": [(x1, y1, x2, y2[, label])]}.
    """
    return json.loads(_core._evaluate_json(list(images), max_dets))


def generate_synthetic(n_images, seed, **scene):
    """Synthetic shelf scenes; keyword arguments override the scene template
    (grid_rows, grid_cols, box_w, box_h, jitter, overlap_factor)."""
    return json.loads(_core._synthetic_json(n_images, seed, json.dumps(scene)))


def run_cotraining(config):
    """Runs co-training from a RunConfig dict and returns the RunReport dict."""
    return json.loads(_core._cotrain_json(json.dumps(config)))


def tune(config):
    """Tunes the pipeline hyperparameters; returns best score, vector, trace."""
    return json.loads(_core._tune_json(json.dumps(config)))
