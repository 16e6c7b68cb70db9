"""Entanglement-based QKD laboratory.

Analytic key-rate model (:mod:`entqkd.keyrate`), event-level Monte Carlo
(:mod:`entqkd.simulator`), time-tag synchronisation (:mod:`entqkd.timesync`)
and BBM92 post-processing (:mod:`entqkd.protocol`).
"""

__version__ = "0.1.0"
