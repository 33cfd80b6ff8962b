"""Euler curve transforms of embedded meshes and a rotation-aware network on top of them."""
from .complex import (EmbeddedComplex, Isometry, apply_isometry, euler_characteristic,
                      normalize_scale, parse_obj, parse_off, random_isometry, read_mesh,
                      subdivide, validate_complex)
from .sphere import DirectionSet, SphereGraph, fibonacci_directions, icosphere
from .topology import (EctField, PersistenceDiagram, bottleneck_distance, compute_persistence,
                       ect_field, euler_curve_by_counting, euler_curve_from_persistence,
                       height_values, landscape_by_rank, landscape_from_diagram)

__version__ = "0.1.0"
