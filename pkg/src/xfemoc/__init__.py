"""Extended finite elements for box-constrained elliptic optimal control at corners and cracks."""

from .geometry import CornerGeometry
from .mesh import Mesh, MeshError, build_structured_crack_mesh, build_three_quarter_disk_mesh
from .enrichment import CutoffSpec, EnrichmentConfig, DofMap, classify_nodes

__version__ = "0.1.0"
