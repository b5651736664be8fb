"""Synthesis of compact feed-forward classifiers: predictor-guided architecture search
over a hyperparameter grid followed by grow-and-prune refinement."""

__version__ = "0.1.0"
