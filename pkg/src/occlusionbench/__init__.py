"""Occlusion-robustness evaluation toolkit for 3D human pose estimators.

Synthesizes calibrated partial occlusions over person crops, decodes
volumetric-heatmap predictions into camera-space 3D poses, scores them
with MPJPE, and sweeps occlusion kind x degree grids into robustness
curves and train/test augmentation matrices.
"""

__version__ = "0.1.0"
