"""Trot simulator, terrain, depth rendering and dataset files."""
