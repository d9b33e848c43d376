"""Inverse fast multipole method: an O(N) approximate direct solver and
preconditioner for dense kernel matrices in hierarchical (H2) format."""

from .dense import DenseProblem, assemble_dense, dense_cond, dense_eigs, dense_solve
from .factor import IFMMFactorization, SingularPivotError, factorize
from .graph import ExtendedGraph, assemble_extended_graph, estimate_sigma0, h2_dense
from .h2 import H2Operators, chebyshev_operators, initialize_weights
from .kernels import (Kernel, Scene, benchmark_kernel, concentric_shells,
                      cube_uniform, icosphere, rpy_kernel, scaled_d,
                      sphere_lattice, sphere_surface)
from .krylov import IterationTrace, block_diag_preconditioner, gmres, h2_matvec
from .lowrank import (BasisUpdate, LowRankFactor, aca_svd, rank_from_reference,
                      randomized_svd, truncated_svd, weighted_basis_union)
from .tree import (Cluster, ClusterTopology, DegenerateGeometryError, Octree,
                   build_octree, compute_topology)

__version__ = "0.1.0"
