"""Molecular graph featurization, pretraining and multitask finetuning at desk scale."""

__version__ = "0.1.0"
