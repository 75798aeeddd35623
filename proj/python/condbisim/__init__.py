"""Exact conditional-bisimulation toolkit for contextual MDPs."""

from ._core import (
    __version__,
    bisim_metric,
    env_hash,
    generate_env,
    pi_bisim_metric,
    run_cli,
    run_rcb,
    train_embedding,
    verify_bound,
    wasserstein1,
)

__all__ = [
    "__version__",
    "bisim_metric",
    "env_hash",
    "generate_env",
    "pi_bisim_metric",
    "run_cli",
    "run_rcb",
    "train_embedding",
    "verify_bound",
    "wasserstein1",
]
