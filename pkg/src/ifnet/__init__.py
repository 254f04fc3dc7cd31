"""Implicit feature networks for 3D shape reconstruction and completion.

Learns continuous occupancy fields from deficient 3D inputs (sparse or dense
voxelized point clouds, low-resolution occupancy grids, single-view depth
scans) and extracts watertight triangle meshes from them. Multi-scale feature
grids queried by trilinear interpolation preserve shape detail and make the
predictions translation-equivariant; a point-wise decoder turns the sampled
features into occupancy probabilities.
"""

__version__ = "0.1.0"
