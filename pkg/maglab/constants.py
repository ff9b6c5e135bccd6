import math

LOGGER_NAME = "maglab"

# Environment overrides read by maglab.init()
ENV_THREADS = "MAGLAB_THREADS"
ENV_OUTPUT_DIR = "MAGLAB_OUT"
ENV_REPORT_FORMAT = "MAGLAB_FORMAT"
ENV_LOG_LEVEL = "MAGLAB_LOG_LEVEL"

REPORT_FORMATS = ("csv", "csv+svg")

# First zero of J_0; the unit-disk Dirichlet ground state is its square.
BESSEL_J01 = 2.404825557695773
DISK_GROUND_STATE = BESSEL_J01 ** 2

# Lattice membership tolerance, relative to the cell size.
LATTICE_TOL = 1e-12

# Slack in the cell index; a charge on a shared cell edge goes to the upper cell.
CELL_EDGE_TOL = 1e-9

# Fixed Gauss-Legendre order for radial cumulative-mass integrals.
GAUSS_ORDER = 64

# Relative accuracy of the bump normalisation constant.
BUMP_QUAD_RTOL = 1e-12

# N_k = 2**(B**(k-1)) is only materialised while the exponent fits a signed 64-bit int.
MAX_SCHEDULE_EXPONENT = 62

DEFAULT_EIG_TOL = 1e-8
DEFAULT_EIG_MAX_ITER = 500
INNER_SOLVE_RTOL = 1e-12
# Relative residual below which the fixed Gershgorin shift is replaced by a Rayleigh shift.
RAYLEIGH_SWITCH = 1e-3
# Outer steps after which a residual that has not halved also triggers a Rayleigh shift.
STALL_WINDOW = 25
# Operators up to this dimension are inverted through a sparse LU factorisation.
DIRECT_LIMIT = 250_000
DENSE_LIMIT = 2000

QUADRATURE_MIDPOINT = "midpoint"
QUADRATURE_SIMPSON = "simpson"
QUADRATURE_EXACT = "exact"
QUADRATURES = (QUADRATURE_MIDPOINT, QUADRATURE_SIMPSON, QUADRATURE_EXACT)

# Default smooth cut-off window and extension knots on B(0, 2).
CHI1_KNOTS = (4.0 / 3.0, 1.5)
CHI2_STEP_END = 5.0 / 3.0
CHI2_MIN_STRENGTH = 8.0
CHI2_SAFETY = 2.0
EXTENSION_RADIUS = 2.0

BAND_LIMIT_TOL = 1e-8
PARSEVAL_TOL = 1e-10
GAUGE_TOL = 1e-10

# Angular orders scanned by the Aharonov-Bohm radial oracle.
AB_ORDERS = range(-8, 9)

TWO_PI = 2.0 * math.pi

# CLI exit codes
EXIT_OK = 0
EXIT_FLAGGED = 1
EXIT_CONFIG_ERROR = 2
EXIT_INTERNAL_ERROR = 3
