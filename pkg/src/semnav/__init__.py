"""Semantic navigation stack: online scene graph, language-grounded goal
retrieval, global and local planning, and barrier-constrained tracking in a
deterministic simulated outdoor world."""

__version__ = "0.1.0"
