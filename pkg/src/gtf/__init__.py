"""Six-DOF ground truth from three tracking total stations.

Simulation of the station/radio/clock setup plus the batch processing chain
(gating, frame unification, interpolation, point-to-point pose solving) and
the precision analyses built on top of it.
"""

__version__ = "0.1.0"
