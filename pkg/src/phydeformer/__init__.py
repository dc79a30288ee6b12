"""Non-rigid garment registration with contour grading and Jacobian-field refinement."""
from .mesh import TriMesh, load_obj, save_obj

__version__ = "0.1.0"
__all__ = ["TriMesh", "load_obj", "save_obj", "__version__"]
