from dotenv import load_dotenv
import os

VERSION = "0.3.0"


class Config:
    
    def __init__(self):
        load_dotenv(".env")
        # Runtime
        self.threads = int(os.getenv("SPDELAB_THREADS", os.cpu_count() or 1))
        seed = os.getenv("SPDELAB_SEED")
        self.seed_override = int(seed) if seed not in (None, "") else None
        self.log_level = os.getenv("SPDELAB_LOG_LEVEL", "INFO")
        self.output_dir = os.getenv("SPDELAB_OUTPUT_DIR", "results")
        # Reference frame
        self.reference_modes = int(os.getenv("SPDELAB_REFERENCE_MODES", 4096))
        self.quadrature_factor = 2
        # Rate checks
        self.t_points_per_decade = 40
        self.t_min = 1e-6
        self.spectral_tolerance = 0.05
        self.fem_tolerance = 0.15
        self.bounded_growth = 0.05
        # Monte Carlo
        self.bootstrap_resamples = 1000
        self.reference_shift_limit = 0.10
        # k * lambda_{N+1} at the finest spatial level
        self.spatial_step_limit = 0.5

config = Config()
