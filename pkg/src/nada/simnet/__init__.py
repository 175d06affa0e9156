"""Deterministic network simulation, adversary injection and scenario runner."""

from __future__ import annotations

from .network import Envelope, Network

__all__ = ["Envelope", "Network"]
