"""Iso-surface extraction from density fields, for FEM-style handoff."""

from dataclasses import dataclass

import numpy as np
from skimage import measure

from .errors import InvalidInputError
from .geometry import DensityField


@dataclass
class TriangleMesh:
    vertices: np.ndarray             # (V, 3) scene units
    faces: np.ndarray                # (F, 3) int vertex indices

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    def __len__(self):
        return self.faces.shape[0]

    def surface_area(self) -> float:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1).sum()


def export_mesh(field: DensityField, iso: float) -> TriangleMesh:
    """Marching-cubes triangulation of the iso-surface, in scene units.

    The field is zero-padded by one voxel so surfaces touching the grid
    boundary still close. An empty iso-surface yields an empty mesh.
    """
    if not 0.0 < iso < 1.0:
        raise InvalidInputError("iso level must lie in (0, 1)")
    padded = np.pad(field.values, 1)
    if padded.max() <= iso:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    verts, faces, _, _ = measure.marching_cubes(padded, level=iso)
    # padded sample i maps to the voxel center origin + (i - 0.5) * cell
    world = field.origin + (verts.astype(np.float64) - 0.5) * field.cell_size
    return TriangleMesh(world, faces)
