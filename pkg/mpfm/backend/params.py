APP_NAME = "mpfm"
APP_VERSION = "0.3.0"
SNAPSHOT_FORMAT = "mpfm-snapshot"
SNAPSHOT_VERSION = 1
DATASET_FORMAT = "#mpfm-dataset"
DATASET_VERSION = 1
