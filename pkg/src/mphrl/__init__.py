"""Motion-primitive hierarchical reinforcement learning for intersection driving."""

__version__ = "0.1.0"
