"""Certified pointwise sparse domination of Calderón–Zygmund operators on a cell lattice."""

from __future__ import annotations

from .domination import (DominationCertificate, ExceptionalSet, build_exceptional_set, certificate_from_text,
                         certificate_to_text, check_domination, cz_decompose, global_dominate, local_dominate,
                         replay_certificate)
from .function import GridFunction, average, r_average
from .grid import Cube, DyadicGrid, cover_partition, shifted_grids
from .operators import KernelSpec, get_kernel, grand_maximal, operator_constants
from .sparse import SparseFamily, apply_sparse, three_grid_decompose, verify_sparse

__version__ = "0.1.0"
