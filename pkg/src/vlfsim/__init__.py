"""Variable-length feedback coding simulator for discrete memoryless channels."""

from vlfsim.channel import ChannelInfo, Dmc, bsc, compute_info, kl_divergence, load_channel, varphi
from vlfsim.capacity import CapacityResult, capacity, restrict_to_support

__all__ = [
    "CapacityResult",
    "ChannelInfo",
    "Dmc",
    "bsc",
    "capacity",
    "compute_info",
    "kl_divergence",
    "load_channel",
    "restrict_to_support",
    "varphi",
]

__version__ = "0.1.0"
