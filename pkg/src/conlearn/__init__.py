"""conlearn: training neural models with output constraints.

Constraint losses (soft logic / REINFORCE), exploration strategies
(top-1 / sampling / exhaustive) and learning-signal integration mechanisms
(static / monotone / gradient projection), plus the synthetic tasks and the
H-beta evaluation harness used to compare them.
"""

__version__ = "0.1.0"
