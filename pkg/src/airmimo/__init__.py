"""Physical-layer toolkit for downlink multi-user massive MIMO-OFDM.

Sparse multipath channel generation, CSI-error synthesis, an
error-covariance-aware WMMSE beamformer with water-filling power
allocation, and a Monte Carlo link simulator.
"""

from airmimo.errors import ConfigError, ContractError, FormatError, NumericError
from airmimo.tensor import RandomSource

__all__ = [
    "ConfigError",
    "ContractError",
    "FormatError",
    "NumericError",
    "RandomSource",
]

__version__ = "0.1.0"
