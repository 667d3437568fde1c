"""Shared numeric tolerances.

All costs and LP values are doubles. Analysis-level statements are exact;
the desk-scale checks tolerate solver noise through these constants.
"""

# Generic comparison tolerance for graph/cost arithmetic.
NUM_EPS = 1e-9

# Constraint-residual tolerance for returned LP solutions.
FEAS_EPS = 1e-7

# Relative tolerance on LP objectives.
OBJ_REL_EPS = 1e-6

# Default tolerance for the relative-integrality check (solver noise floor).
RI_TAU = 1e-6
