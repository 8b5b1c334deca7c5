"""Goal-oriented adaptive sparse-grid stochastic collocation FEM."""
from .adaptive import run, step
from .config import RunConfig
from .mesh import Mesh, detail_nodes, nvb_refine, read_mesh, uniform_refine, write_mesh
from .problems import reference_solve, setup

__all__ = ["Mesh", "RunConfig", "detail_nodes", "nvb_refine", "read_mesh", "reference_solve",
           "run", "setup", "step", "uniform_refine", "write_mesh"]
__version__ = "0.1.0"
