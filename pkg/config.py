"""
Configuration settings for the SRB prediction toolkit.
"""

import os


class Config:
    """Application configuration."""

    # Logging
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
    LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    # Parallelism (replicates run in parallel, output is serialized)
    THREADS = int(os.getenv('SRB_THREADS', '1'))

    # Scaled experiment defaults
    DEFAULT_N = 500
    DEFAULT_SAMPLE_SIZE = 100
    DEFAULT_REPLICATES = 50
    DEFAULT_SPLITS = 20
    DEFAULT_TRAIN_FRACTION = 0.7
    DEFAULT_MIXTURE = (('M1', 0.5), ('M2', 0.5))
    DEFAULT_SEED = 20240601

    # Full-scale simulation constants
    FULL_N = 2000
    FULL_SAMPLE_SIZE = 200
    FULL_REPLICATES = 200
    FULL_SPLITS = 50
    POISSON_ALPHAS = (1.0, -0.1, -1.0)

    # Learner defaults
    FOREST_TREES = 50
    FOREST_MAX_FEATURES = 1
    FOREST_MIN_LEAF = 1
    FOREST_BOOTSTRAP = True
    KNN_NEIGHBOURS = 5

    # Numerical tolerances
    ROOT_XTOL = 1e-14
    IDENTITY_TOL = 1e-9
    EXACT_TOL = 1e-10
    NORMALIZATION_TOL = 1e-12

    # Enumeration limits
    ENUM_MAX_SRS_N = 10
    ENUM_MAX_POISSON_N = 8

    # Active-set solver enumerates 2^K - 1 faces
    MAX_ENSEMBLE_SIZE = 6

    # Times T is doubled when a sample unit is never out-of-bag
    SPLIT_RETRIES = 2

    # Output
    FLOAT_FORMAT = '%.10g'
    REPLICATES_FILE = 'replicates.csv'
    SUMMARY_FILE = 'summary.csv'
    VERIFY_FILE = 'verify_report.csv'

    # API metadata
    VERSION = '1.0.0'
