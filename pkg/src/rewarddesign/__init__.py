"""Bilevel reward design for fleet repositioning.

Lower level: populations of selfish repositioning drivers trained with a
mean-field actor-critic. Upper level: a scalar reward-design parameter tuned
by Gaussian-process Bayesian optimization under a UCB acquisition.
"""

__version__ = "0.1.0"
