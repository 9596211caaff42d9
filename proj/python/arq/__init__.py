"""Certified-robustness-aware mixed-precision quantization."""

from ._arq import (
    ArqError,
    BudgetError,
    Config,
    ConfigError,
    Dataset,
    FormatError,
    Network,
    Policy,
    Splits,
    action_to_bitwidth,
    binom_lower_bound,
    binom_upper_bound,
    bitops,
    certify,
    evaluate,
    generate_data,
    init_model,
    inv_norm_cdf,
    load_dataset,
    load_model,
    load_policy,
    norm_cdf,
    quantize,
    search,
    train,
    uniform_policy,
)

__version__ = "1.0.0"
