"""Two-stage transfer-learning pipeline: GP/EI head tuning and
trajectory-similarity filter pruning."""

from ._core import (
    GaussianProcess,
    HeadConfig,
    SearchSpace,
    TascError,
    checkpoint_flops,
    checkpoint_params,
    cosine_similarity,
    decode,
    encode,
    enumerate_space,
    expected_improvement,
    generate_synthetic,
    run_command,
    sample_uniform,
    space_from_config_text,
    __version__,
)

__all__ = [
    "GaussianProcess",
    "HeadConfig",
    "SearchSpace",
    "TascError",
    "checkpoint_flops",
    "checkpoint_params",
    "cosine_similarity",
    "decode",
    "encode",
    "enumerate_space",
    "expected_improvement",
    "generate_synthetic",
    "run_command",
    "sample_uniform",
    "space_from_config_text",
    "__version__",
]
