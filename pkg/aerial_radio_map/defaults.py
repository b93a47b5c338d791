import os

EARTH_RADIUS_M = 6378137.0

DEFAULT_CARRIER_HZ = 3.51e9
DEFAULT_TX_POWER_DBM = 10.0
DEFAULT_BS_HEIGHT_M = 10.0
DEFAULT_EPSILON0 = 15.0

DEFAULT_HEIGHTS_M = (30.0, 50.0, 70.0, 90.0, 110.0)

# Horizontal bi-exponential parameters at zero vertical offset and the
# vertical half-correlation distance measured over the test site.
DEFAULT_MIXTURE_WEIGHT = 0.3
DEFAULT_B1_PER_M = 0.02815
DEFAULT_B2_PER_M = 0.2474
DEFAULT_D_COR_M = 11.24
DEFAULT_SIGMA_W_DB = 6.9

DEFAULT_POWER_OFFSET_DB = 98.0
DEFAULT_TRIM_TOLERANCE_M = 3.0
RSRP_RANGE_DBM = (-160.0, 0.0)

DEFAULT_BIN_M = 2.0
DEFAULT_VERTICAL_MATCH_M = 3.0
MIN_VERTICAL_PAIRS = 10
DEFAULT_SAMPLE_SPACING_M = 2.0

DEFAULT_R0_M = 100.0
DEFAULT_M_MAX = 100
DEFAULT_XVAL_ITERATIONS = 1000
DEFAULT_N0 = 100

GAIN_FLOOR_LINEAR = 1e-12
COLOCATED_TOLERANCE_M = 1e-9

JITTER_START = 1e-10
JITTER_MAX = 1e-6

CSV_FLOAT_FORMAT = "%.12g"

MEASUREMENT_COLUMNS = ("t_s", "lat_deg", "lon_deg", "alt_m", "rsrp_dbm")
TRUTH_COLUMNS = ("true_pl_db", "true_w_db")
PATTERN_COLUMNS = ("azimuth_deg", "elevation_deg", "gain_dbi")

MANIFEST_FILE_NAME = "manifest.json"
DATASET_ENV_VAR = "AERIAL_RADIO_MAP_DATASET"

DEFAULT_CONFIG_FILE = os.path.join("configs", "synthetic.toml")
