"""Distributed control-estimation synthesis for linear stochastic
multi-agent systems under network topology constraints."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    MasModel,
    NetworkTopology,
    SynthesisConfig,
    ValidatedInstance,
    build_selector,
    validate_model,
)
from .horizon import (  # noqa: F401
    HorizonOperators,
    apply_mask,
    build_horizon,
    causal_mask,
    law_to_phi,
    phi_to_law,
    topology_mask,
)
