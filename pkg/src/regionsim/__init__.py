"""Region-graph discrete-event simulation of adversary movement, event
outcomes and robot interventions."""

__version__ = "0.1.0"
