import math

# Program meta
PROGRAM_NAME = "silhouette-pose"
FORMAT_VERSION = 1            # written into every file format we own
SEED = 1337

# Rendering
SUPERSAMPLE = 4               # binary render at 4x, box-downsampled to the output size
OLOID_SAMPLES_PER_CIRCLE = 64
OLOID_MIN_SAMPLES = 16
RENDER_MARGIN_PX = 6          # extra border around a synthetic render window

# Silhouette cost
COST_RESOLUTION = 100         # both images are resampled to this square size
COST_THRESHOLD = 0.5          # binarization after the box resize
CUTOUT_PAD = 0.1              # padding fraction around the silhouette bbox when aligning

# Orientation library
LIBRARY_AXES = 100
LIBRARY_ANGLES = 16
LIBRARY_RESOLUTION = 100
LIBRARY_DUPLICATE_TOL = 1e-6  # rad, only exact symmetry collisions are dropped
LIBRARY_CACHE_DIR = ".silpose_cache"
FIRST_GUESSES = 4
CLASSIFY_MARGIN = 0.25        # refine the runner-up type too when its guess error is this close

# Nelder-Mead
NM_REFLECT = 1.0
NM_EXPAND = 2.0
NM_CONTRACT = 0.5
NM_SHRINK = 0.5
NM_VOL_TOL = 1e-8             # simplex hyper-volume, degree-equivalent units
NM_INIT_SPREAD = math.radians(5.0)
NM_MAX_ITER = 500

# Cameras / rigs
RIG_WORKING_DISTANCE = 570.0  # world units from the origin to every preset camera
RIG_FOCAL_LENGTH = 3440.0     # px; a ~5 unit particle images at ~30 px
RIG_SENSOR_SIZE = (1024, 1024)
NEAR_PLANAR_AZIMUTHS = (-25.0, 25.0, -8.0, 8.0)   # degrees, camera order matters for subsets
NEAR_PLANAR_ELEVATIONS = (4.0, -4.0, -6.0, 6.0)
PARALLEL_RAY_TOL = 1e-6       # rad
MATCH_EXHAUSTIVE_LIMIT = 200_000  # candidate tuples before switching to pair-seeded matching
MATCH_PIXEL_TOL = 3.0         # px, reprojection gate when seeding from camera pairs
MATCH_GAP_TOL = 1.3           # world units, rms ray gap accepted for one particle
MATCH_GAP_FRACTION = 0.5      # gap tolerance per unit of particle bounding radius

# Particle models
CHIRAL_SHAFT_LENGTH = 3.6
CHIRAL_ARM_LENGTH = 1.8
CHIRAL_ARM_ANGLE = math.radians(45.0)  # arms twisted +-45 deg around the shaft
CHIRAL_TUBE_RADIUS = 0.4
TETRAD_ARM_LENGTH = 2.5
TETRAD_TUBE_RADIUS = 0.3
OLOID_CIRCLE_RADIUS = 2.5
TETRAD_SYMMETRY = True        # reduce tetrad errors by its 12-element group
OLOID_SYMMETRY = True

# Segmentation / tracking
SEGMENT_THRESHOLD = 0.5
SEGMENT_MIN_AREA = 10
SEGMENT_MAX_AREA = 100_000
SEGMENT_PADDING = 4           # px around every cutout
SEGMENT_RIM_DILATION = 2      # keep anti-aliased rim pixels next to a component
OVERLAP_AREA_FACTOR = 1.8     # blob area above 1.8x the median is treated as two particles
COM_ITERATIONS = 1
TRACK_MAX_JUMP = 5.0          # world units between predicted and detected position
JUMP_FACTOR = 5.0             # orientation step above 5x running median is flagged
JUMP_FLOOR_DEG = 0.5
JUMP_WINDOW = 15

# Synthetic benchmarks
BENCH_ORIENTATIONS = 200
BENCH_IMAGE_SIZE = 60
BENCH_RIG = "near_planar_4"
BENCH_KIND = "chiral_right"
BENCH_FILL = 0.9              # bounding sphere diameter / image size
BENCH_FAILURE_DEG = 10.0      # gross failure cutoff
BENCH_HIST_BINS = 50
BENCH_NOISE_LEVELS = (0.0, 0.1, 0.2, 0.3)
BENCH_NOISE_SEEDS = 3         # runs per noise level; the level reports their median
BENCH_IMAGE_SIZES = (30, 60, 100)
BENCH_CAMERA_COUNTS = (2, 3, 4)
BENCH_ARRANGEMENTS = ("single", "orthogonal_2", "orthogonal_3", "near_planar_4", "tetrahedral_4")
COUPLING_POSITION_FRACTION = 0.2  # position offset as a fraction of the imaged particle size
COUPLING_REFERENCES = 1000
COUPLING_ROTATIONS = 100
COUPLING_IMAGE_SIZE = 30      # experimental chiral images were ~30 px
COM_MAP_STEPS = 36

# Synthetic sequences
SEQUENCE_FRAMES = 100
SEQUENCE_RATE_DEG = 1.0
SEQUENCE_IMAGE_SIZE = 120
SEQUENCE_SENSOR = (256, 256)

# Runtime
WORKERS = 0                   # 0 = available processor count
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
