"""Carrier-phase ranging, link classification, and trajectory fusion.

The package simulates comb-allocated subcarrier sounding over multipath
channels, resolves distances through a coarse-to-fine virtual-wavelength
cascade, filters non-direct links with a small 1-D CNN, solves positions
by Gauss-Newton range intersection, and fuses fixes with inertial and
odometry data in an error-state Kalman filter.
"""

__version__ = "0.1.0"
