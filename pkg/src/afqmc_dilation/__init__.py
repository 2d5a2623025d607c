"""Stochastic Magnus AFQMC with ancilla-chain dilation and LCU evaluation."""

__version__ = "0.1.0"
