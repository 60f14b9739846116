"""bonelift - lifting 2-D pose sequences to 3-D with bone-aware selective state space blocks."""

__version__ = "0.1.0"
