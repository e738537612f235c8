# felrl/__init__.py
"""
Reinforcement-learning toolkit for FEL seed-laser tuning: NAF2, anchored
ensembles and AE-DYNA-SAC on a pendulum and an FEL simulator.
"""

__version__ = "0.1.0"
