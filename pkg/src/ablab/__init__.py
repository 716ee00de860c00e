"""MiniTown visual-abstraction lab.

A self-contained pipeline for studying label-efficient intermediate
representations for driving policies: a 2-D town simulator, trainable
perception (segmentation + detection), a conditional imitation policy,
and a closed-loop benchmark with cross-seed variance reports.
"""

__version__ = "0.1.0"
