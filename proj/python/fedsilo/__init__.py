"""Cross-silo federated training with client-adaptive affine transforms."""

from ._fedsilo import (
    __version__,
    anneal,
    checkpoint_info,
    compose_check,
    default_config_json,
    derive_weights,
    fedavg_update,
    run_experiment,
    verify,
)

__all__ = [
    "__version__",
    "anneal",
    "checkpoint_info",
    "compose_check",
    "default_config_json",
    "derive_weights",
    "fedavg_update",
    "run_experiment",
    "verify",
]
