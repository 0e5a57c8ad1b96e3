"""Q-learning from imperfect proxy rewards plus sparse corrective feedback."""

__version__ = "0.1.0"
