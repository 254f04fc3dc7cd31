from .mesh import (MeshFormatError, Transform, TriMesh, cleanup, load_mesh,
                   normalize, sample_surface, save_mesh, vertex_normals)
from .pointcloud import PointCloud, load_xyz, save_xyz
from .voxel import (VoxelGrid, cell_axis, load_voxels, save_voxels,
                    voxelize_mesh, voxelize_points)
from .occupancy import (NonWatertightError, OracleAmbiguityError,
                        check_watertight, mesh_ray_accel, occupancy_oracle)
from .depth import depth_cull, view_basis
from .sdf import box_sdf, capsule_sdf, sphere_sdf, union_sdf
from .synthetic import (KINDS, box_mesh, capsule_mesh, figure_segments,
                        gen_capsule_figure, gen_synthetic, icosphere, sdf_mesh)

__all__ = [
    "MeshFormatError", "Transform", "TriMesh", "cleanup", "load_mesh",
    "normalize", "sample_surface", "save_mesh", "vertex_normals",
    "PointCloud", "load_xyz", "save_xyz",
    "VoxelGrid", "cell_axis", "load_voxels", "save_voxels",
    "voxelize_mesh", "voxelize_points",
    "NonWatertightError", "OracleAmbiguityError", "check_watertight",
    "mesh_ray_accel", "occupancy_oracle",
    "depth_cull", "view_basis",
    "box_sdf", "capsule_sdf", "sphere_sdf", "union_sdf",
    "KINDS", "box_mesh", "capsule_mesh", "figure_segments",
    "gen_capsule_figure", "gen_synthetic", "icosphere", "sdf_mesh",
]
