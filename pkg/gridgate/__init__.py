"""
gridgate
~~~~~~~~

Validation of distribution-grid datasets by rule checks and offline
multi-period load flows, and fair allocation of PV hosting capacity.
"""

__version__ = "1.0.0"
