"""Python access to the multi-granular hypergraph engine."""

import json
import os
import tempfile

from ._core import (
    ConfigError,
    CorpusError,
    MGHError,
    NumericError,
    ShapeError,
    build_hyperedges,
    descriptors,
    gradcheck,
    pairwise_cosine_distance,
    run_cli,
)
from ._core import inspect_graph as _inspect_graph

__all__ = [
    "ConfigError",
    "CorpusError",
    "MGHError",
    "NumericError",
    "ShapeError",
    "build_hyperedges",
    "descriptors",
    "evaluate",
    "generate_corpus",
    "gradcheck",
    "inspect_graph",
    "pairwise_cosine_distance",
    "run_cli",
    "train",
]


def _config_args(settings, workdir):
    if not settings:
        return []
    path = os.path.join(workdir, "settings.cfg")
    with open(path, "w") as handle:
        for key, value in settings.items():
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            handle.write(f"{key} = {value}\n")
    return ["--config", path]


def _call(args, settings=None):
    with tempfile.TemporaryDirectory() as workdir:
        code, out, err = run_cli(args + _config_args(settings, workdir))
    if code == 2:
        raise NumericError(err.strip())
    if code != 0:
        raise MGHError(err.strip())
    return json.loads(out)


def generate_corpus(out_dir, seed=None, **settings):
    """Write a synthetic corpus to `out_dir`; returns the split counts."""
    args = ["gen-data", "--out", str(out_dir)]
    if seed is not None:
        args += ["--seed", str(seed)]
    return _call(args, settings)


def train(corpus, out_dir, seed=None, resume=None, **settings):
    """Train on `corpus`, writing losses.csv and final.ckpt into `out_dir`."""
    args = ["train", "--corpus", str(corpus), "--out", str(out_dir)]
    if seed is not None:
        args += ["--seed", str(seed)]
    if resume is not None:
        args += ["--resume", str(resume)]
    return _call(args, settings)


def evaluate(checkpoint, corpus, ranking_csv=None):
    """Retrieval report (mAP, CMC top-1/5/20, per-query AP) as a dict."""
    args = ["eval", "--checkpoint", str(checkpoint), "--corpus", str(corpus)]
    if ranking_csv is not None:
        args += ["--ranking-csv", str(ranking_csv)]
    return _call(args)


def inspect_graph(checkpoint, corpus, tracklet):
    """Topology, last-layer gamma weights and attention for one tracklet."""
    return json.loads(_inspect_graph(checkpoint, corpus, int(tracklet)))
