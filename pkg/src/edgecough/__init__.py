"""Multimodal cough detection pipeline for duty-cycled wearables.

Feature extraction for audio and kinematic windows, boosted-tree inference,
a kinematic-triggers-audio scheduler, cough event delineation, event-based
scoring and a trace-driven energy simulator.
"""

__version__ = "0.1.0"
