"""bomberac: asynchronous actor-critic training with a terminal-prediction
auxiliary head and an optional tree-search demonstrator worker, on a
two-player mini bomber arena."""

__version__ = "0.1.0"
