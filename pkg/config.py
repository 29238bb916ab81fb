# Numerical constants shared by every package. Run-level settings live in config/*.yml.

ROTATION_TOL = 1e-12  # ||R^T R - I|| and |det R - 1| for stored SO(3) matrices
UNIT_TOL = 1e-10  # unit-norm check for sphere points and harmonic arguments
SPHERE_POINT_TOL = 1e-12  # unit-norm check inside manifold point validation
CHART_MARGIN = 1e-9  # stereographic charts exclude a ball of this size around their pole
WEIGHT_SYMMETRY_TOL = 1e-12

DENSE_LIMIT = 4096  # largest n * dim(V) assembled as a dense operator
MAX_CORRELATION_ORDER = 4
MAX_MESSAGE_OUTPUTS = 10_000  # scalar outputs per node
MACE_SPATIAL_DEGREE = 2  # largest spherical-harmonic degree carried into B-feature products
STABILITY_SAFETY = 0.9  # dt = STABILITY_SAFETY / (lambda_hat + cas_max)

CG_SEED = 20_231_117  # seed of the random vector projected onto the Clebsch-Gordan line
POSITIVITY_GRID = 2001  # samples of [0, pi] used by the truncation positivity search

DEFAULT_SEED = 1235
DEFAULT_THREADS = 1
