"""Decoding pathological vs. normal EEG with deep and shallow ConvNets, plus analysis tools."""

__version__ = "0.3.0"
