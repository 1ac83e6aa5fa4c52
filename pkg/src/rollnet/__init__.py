"""Local linearity of piecewise linear networks: certificates, regularized training, attacks."""

__version__ = "0.1.0"

from rollnet.network import Network, forward, load_model, random_network, save_model  # noqa: E402
from rollnet.linearization import ActivationPattern, Linearization, linearize  # noqa: E402
from rollnet.certify import count_clr, directional_margin, l1_margin, l2_margin  # noqa: E402
from rollnet.roll import RollConfig  # noqa: E402

__all__ = [
    "Network", "forward", "load_model", "random_network", "save_model",
    "ActivationPattern", "Linearization", "linearize",
    "count_clr", "directional_margin", "l1_margin", "l2_margin", "RollConfig",
]
