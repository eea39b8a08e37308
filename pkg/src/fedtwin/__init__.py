"""Federated cardiovascular risk modeling toolkit.

Pipeline stages: cohort data (CDF) parsing, pairing-rule harmonization into
canonical resource bundles, path-expression projection to flat tables, deep
Cox survival training with federated averaging, and a what-if risk service.
"""

__version__ = "0.1.0"
