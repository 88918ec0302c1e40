"""Python access to the jex VQA library."""

import json

from ._jex import (
    DataError,
    NumericError,
    Predictor,
    generate_toy,
    load_features,
    maxpool1d,
    nearest,
    param_count,
    run_cli,
    tucker_fuse,
)
from ._jex import split_json as _split_json

__all__ = [
    "DataError",
    "NumericError",
    "Predictor",
    "generate_toy",
    "load_features",
    "maxpool1d",
    "nearest",
    "param_count",
    "run_cli",
    "split",
    "tucker_fuse",
]


def split(instances, questions, annotations):
    """Known/unknown split manifest as a dict."""
    def paths(xs):
        return [str(x) for x in xs]

    return json.loads(_split_json(paths(instances), paths(questions), paths(annotations)))
