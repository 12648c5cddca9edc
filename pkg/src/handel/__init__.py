"""Handel: Byzantine-tolerant aggregation over a San Fermin style overlay.

The package is split into the contribution scheme (``scheme``), the tree
overlay (``overlay``), peer ranking and windowing (``ranking``), the node
state machine and wire format (``node``, ``wire``), a discrete-event
simulator (``simulator``) and a Monte Carlo check of the convergence model
(``convergence``).
"""

from handel.scheme import Contribution, PublicParams, ReferenceScheme, Scheme
from handel.overlay import Roster, num_levels, peer_set, shuffle_ids
from handel.node import Message, Node, NodeConfig

__all__ = [
    "Contribution",
    "Message",
    "Node",
    "NodeConfig",
    "PublicParams",
    "ReferenceScheme",
    "Roster",
    "Scheme",
    "num_levels",
    "peer_set",
    "shuffle_ids",
]
