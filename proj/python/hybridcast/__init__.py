"""Python access to the hybridcast forecaster.

Configurations are plain dicts using the same keys as the JSON config files.
Arrays come back as NumPy arrays (rows are time steps).
"""

import json as _json

from . import _core
from ._core import ContractViolation, Episode, Forecast, Model, cosine_similarity, example_pr_f1, git_blob_hash
from ._core import gumbel_softmax_log_density, min_mean_msd, topk_recall

__all__ = [
    "ContractViolation",
    "Episode",
    "Forecast",
    "Model",
    "cosine_similarity",
    "create_model",
    "default_world",
    "evaluate",
    "example_pr_f1",
    "generate_dataset",
    "git_blob_hash",
    "gumbel_softmax_log_density",
    "load_checkpoint",
    "min_mean_msd",
    "run_cli",
    "topk_recall",
    "train",
]


def _dump(cfg):
    return "" if cfg is None else _json.dumps(cfg)


def default_world():
    return _json.loads(_core.default_world())


def generate_dataset(world=None, episodes=100):
    return _core.generate_dataset(_dump(world), episodes)


def create_model(config, seed=0):
    return Model.create(_dump(config), seed)


def train(train_episodes, validation_episodes, model, config=None, loss=None):
    """Runs batch training. Returns (model, summary dict with the per-epoch log)."""
    m, summary = _core.train(train_episodes, validation_episodes, _dump(model), _dump(config), _dump(loss))
    return m, _json.loads(summary)


def evaluate(model, episodes, loss=None, samples=12, seed=0):
    return _json.loads(model.evaluate(episodes, _dump(loss), samples, seed))


def load_checkpoint(path):
    m, info = _core.load_checkpoint(str(path))
    return m, _json.loads(info)


def run_cli(*args):
    """Runs one CLI subcommand in-process and returns its exit code."""
    return _core.run_cli([str(a) for a in args])
