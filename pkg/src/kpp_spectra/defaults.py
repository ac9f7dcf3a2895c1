"""Default resolutions and tolerances, in one place so runs are reproducible.

==========================  ======================================================
name                        meaning
==========================  ======================================================
CELLS_1D                    periodic-cell cells per axis for eigen-solves, n = 1
CELLS_2D                    periodic-cell cells per axis for eigen-solves, n = 2
CFL_SAFETY                  fraction of the explicit stability bound used for dt
EIG_TOL                     power iteration stop on |d ln rho|
EIG_MAX_ITER                power iteration cap (periodic cells)
DIR_MAX_ITER                power iteration cap (Dirichlet boxes, small spectral gap)
DIR_RESOLUTION              cells per unit length for Dirichlet boxes
LAMBDA_MAX_TOL              z displacement per sweep that stops the lambda_1 search
Z_BOUND                     largest |z| explored before declaring non-coercivity
SPEED_REL_TOL               relative tolerance on mu in the critical-speed search
ANGULAR_STEPS               samples of e' on the admissible half circle (n = 2)
ANGLE_CUTOFF                excluded angle (rad) next to e.e' = 0
TOL_ZERO                    eigenvalues within this of 0 are flagged indeterminate
ASSUMPTION_SAMPLES          lattice samples per period per axis for assumption checks
FRONT_LEVEL                 front tracking level relative to the running max
FRONT_MARGIN                cells kept between a tracked front and the boundary
ENTIRE_TOL                  period-map residual for periodic entire solutions
ENTIRE_MAX_PERIODS          period-map iteration cap
HARNESS_TOL                 largest tolerated ordering violation
ABSORB_SLACK                solver slack on the absorbing-set bound
==========================  ======================================================
"""

CELLS_1D = 128
CELLS_2D = 32
CFL_SAFETY = 0.4
EIG_TOL = 1e-10
EIG_MAX_ITER = 500
DIR_MAX_ITER = 20000
DIR_RESOLUTION = 8.0
LAMBDA_MAX_TOL = 1e-4
Z_BOUND = 64.0
SPEED_REL_TOL = 1e-6
ANGULAR_STEPS = 64
ANGLE_CUTOFF = 0.05
TOL_ZERO = 1e-6
ASSUMPTION_SAMPLES = 32
FRONT_LEVEL = 0.1
FRONT_MARGIN = 5
ENTIRE_TOL = 1e-8
ENTIRE_MAX_PERIODS = 2000
HARNESS_TOL = 1e-10
ABSORB_SLACK = 1e-3


def default_cells(spec) -> int:
    return CELLS_1D if spec.n == 1 else CELLS_2D


def table() -> dict:
    return {k: v for k, v in globals().items() if k.isupper()}
