"""HFNC failure prediction toolkit: segmentation, preprocessing, LSTM and
logistic-regression models, and time-anchored evaluation."""

__version__ = "0.1.0"
