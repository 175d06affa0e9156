"""Simulator for a trusted peer-to-peer content distribution platform.

``nada.simnet`` runs scenario scripts and adversary sweeps; ``nada.stride``
checks threat coverage of a data flow model against a mitigation catalog.
"""

from __future__ import annotations

__version__ = "0.1.0"
