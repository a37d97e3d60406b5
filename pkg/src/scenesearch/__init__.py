"""Hierarchical object search in procedurally generated indoor scene graphs.

The package covers the full pipeline: scene-graph generation, a small
dense-tensor autodiff runtime, the message-passing scorer, training,
threshold-guided hierarchical search, and the evaluation harness.
"""

__version__ = "0.1.0"

FORMAT_VERSIONS = {
    "graph": 1,
    "dataset_manifest": 1,
    "checkpoint": 1,
    "trace": 1,
    "report_manifest": 1,
}
