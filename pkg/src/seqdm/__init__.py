"""Sequential decision making: dynamic programming, linear-quadratic control,
bandits and policy search, with a seeded experiment harness."""

__version__ = "0.1.0"
