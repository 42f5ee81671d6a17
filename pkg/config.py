import os


class Config:
    RAW_RECORDS        = 'data/records'
    ENCODED_DAYS       = 'data/encoded'
    RUNS_DIR           = 'runs'
    REFERENCE_CONFIG   = 'config/reference_intersection.yaml'
    EXPERIMENT_CONFIG  = 'config/desk_experiment.yaml'

    LOG_DIR            = 'logs'
    LOG_LEVEL          = os.environ.get('SPAT_LOG_LEVEL', 'INFO')

    N_PHASES           = 6
    HORIZON_SECONDS    = 200
    WINDOW_SECONDS     = 120
    BATCH_SIZE         = 1000
    BUCKET_SECONDS     = 20
    SECONDS_PER_DAY    = 86400
    MISSING            = -1.0

    LEARNING_RATE      = 0.01
    ADAM_BETAS         = (0.9, 0.999)
    ADAM_EPSILON       = 1e-8
    PLATEAU_FACTOR     = 0.3
    PLATEAU_PATIENCE   = 1
    EPOCHS             = 10
    MAPE_FLOOR         = 1.0 / HORIZON_SECONDS
    GRID_CHECK_EVERY   = 250_000

    EXIT_USAGE         = 2
    EXIT_FAILURE       = 1
    EXIT_SUCCESS       = 0
