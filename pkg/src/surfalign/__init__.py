"""Surface-aligned coordinates on watertight triangle meshes."""
__version__ = "0.1.0"
