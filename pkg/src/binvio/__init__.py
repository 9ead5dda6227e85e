"""Binary-feature visual-inertial odometry.

An end-to-end pipeline built around three pieces: an emulated focal-plane
front end that outputs binary corner/edge maps, a KLT tracker that runs on
Gaussian-feathered edge images seeded at binary corners, and a tightly
coupled sliding-window MSCKF backend.  A synthetic data factory and a
trajectory-error evaluator close the loop for hardware-free validation.
"""

__version__ = "0.1.0"
