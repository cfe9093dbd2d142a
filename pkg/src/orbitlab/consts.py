import numpy as np

DEFAULT_WORKERS = 4

#: Fourier truncation order of loops
DEFAULT_K = 32

#: Quadrature samples per loop are ``DEFAULT_OVERSAMPLE * (2K + 1)``
DEFAULT_OVERSAMPLE = 2

DEFAULT_Q = 3.0
DEFAULT_R_FACTOR = 1.5
DEFAULT_B_FACTOR = 0.75
DEFAULT_COLLAR_WIDTH = 0.1

#: S_1 sits at ``H = ε²(1 + 1/4)``
OUTER_LEVEL = 1.25

#: The pure-chart region of h_m extends to this many multiples of the
#: quadratic-model radius of S_1 (capped by the system's chart radius)
CHART_EXTENT_FACTOR = 3.0

#: Step for central-difference Hessians, times the coordinate scale
HESSIAN_STEP = float(np.finfo(float).eps ** (1 / 3))

#: Step for finite-difference derivatives of frame-valued maps
FRAME_FD_STEP = 1e-5

#: Gauss–Legendre nodes used for radial-gauge potentials
GAUSS_NODES = 24

FRAME_TOL = 1e-10
PAIRING_TOL = 1e-8

DEFAULT_ALPHA = 0.02
DEFAULT_TAU_MARGIN = 1.05
DEFAULT_BUDGET = 100_000
DEFAULT_PLATEAU_WINDOW = 50
DEFAULT_PLATEAU_RTOL = 1e-8
DEFAULT_DT = 1e-3
DT_MIN = 1e-12
DEFAULT_TOL_GRAD = 1e-9
DEFAULT_TOL_VALUE = 1e-8
DEFAULT_CAPTURE = 1e-2
DEFAULT_SIGMA_GRID = (3, 3, 16)
DEFAULT_GAMMA_SAMPLES = 32
DEFAULT_NEWTON_MAX_ITER = 12

#: Γ samples are spread over normal modes ``k = 1..GAMMA_MODES``
GAMMA_MODES = 3

#: Minimum accepted β relative to α: F on the flat part of Γ equals α/2
BETA_FRACTION = 0.25

ALPHA_FLOOR = 1e-8
BOUNDARY_TOL = 1e-9

#: Near-critical means ‖∇F‖ ≤ PS_RATIO · max(1, ‖z‖)
PS_RATIO = 1e-2

DEFAULT_INTEGRATOR = "RK45"
DEFAULT_RTOL = 1e-11
DEFAULT_ATOL = 1e-13

CLOSURE_TOL = 1e-6

#: Relative tolerance for ρ-band membership of found orbits
RHO_BAND_SLACK = 1e-6

OUTPUT_DIR_ENVVAR = "ORBITLAB_OUTPUT_DIR"

#: Unit-direction rays per tangential offset when locating the outer level
GAMMA_DIRECTIONS = 8

#: L² constant of the e⁺_N section (``∫|e⁺_N(t)|² dt = c``)
SECTION_L2_CONSTANT = 1.0

#: Finite-difference step for base gradients of F (a fraction of the period)
BASE_FD_STEP = 2 * np.pi * 1e-4

#: Minimum sample count for the (u1)/(u2) sweep
MIN_BOUND_SAMPLES = 1000

#: A flow step moves no front point further than this fraction of ``τ``
MAX_MOVE_FRACTION = 0.02

#: Growth of the flow step after an accepted step
DT_GROWTH = 1.2

#: Step for central differences of ``dρ``, times the model radius of S_1
LEVEL_FD_STEP = 1e-5

#: Hessian eigenvalues of F (in H^{1/2}-orthonormal coordinates) below this
#: count toward the nullity of a critical loop
NULLITY_TOL = 1e-8

#: Scan of the shell coordinate ``v = (ρ + ε)/2ε`` when capturing a sup point
LEVEL_SCAN = (-0.25, 0.75, 41)

#: A sup point whose fibre radius dips below this fraction of its maximum is
#: replaced by its ``k = 1`` normal part before capture
CAPTURE_RADIUS_RATIO = 0.5
