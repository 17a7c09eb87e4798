"""Replica analysis of linear vector channels with discrete inputs.

Modules
-------
ensemble   channel ensembles (i.i.d. and Kronecker), sampling, transmission
spectrum   eigenvalue spectra: empirical, Kronecker saddle point, closed forms
gfunc      the G-function of a spectrum and its derivatives
replica    RS / 1RSB saddle points, bit error rate, AT stability
simulate   posterior-marginal demodulators and Monte Carlo BER
cli        command-line front end
"""
from .errors import CapacityError, ConvergenceError, DomainError, NumericError

__version__ = "0.1.0"

__all__ = ["CapacityError", "ConvergenceError", "DomainError", "NumericError", "__version__"]
