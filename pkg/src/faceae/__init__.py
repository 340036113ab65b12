"""Face-level autoregressive autoencoder for triangle meshes."""

from .mesh_io import RawMesh, MeshReport, parse_obj, write_obj, analyze, read_obj_file

__version__ = "0.1.0"

__all__ = ["RawMesh", "MeshReport", "parse_obj", "write_obj", "analyze", "read_obj_file"]
