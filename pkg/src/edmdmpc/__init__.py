"""EDMD-with-control surrogates and model predictive dose control."""
from ._backend import BACKEND

__version__ = "0.1.0"
