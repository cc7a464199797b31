"""Trunk-state estimation for quadrupeds: a Kalman filter over a rigid-body
model, corrected by a GRU that also sees depth-image latents.

Subpackages: :mod:`optistate.sim` (trot simulator, terrains, depth camera)
and :mod:`optistate.nn` (ViT autoencoder, GRU estimator).
"""
__version__ = "0.1.0"
