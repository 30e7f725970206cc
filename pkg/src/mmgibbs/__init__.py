"""Moment-matched denoising posteriors and pseudo-Gibbs sampling for
energy-based models, with a small numpy differentiation engine."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    CapabilityError,
    ChecksumError,
    ConfigError,
    DataIOError,
    DivergenceError,
    GridTooCoarseError,
    MMGibbsError,
    NumericAbort,
    ParseError,
    ScheduleError,
)
from .numgrad import MlpParams, forward, grad_input, hessian_input, hvp_input  # noqa: F401
from .models import (  # noqa: F401
    GaussianMixture,
    MixtureModel,
    MlpEnergy,
    PosteriorNet,
    ScoreMlp,
    gaussian,
    load_checkpoint,
    corner_mog,
    save_checkpoint,
)
from .posterior import (  # noqa: F401
    GaussianApprox,
    PosteriorKind,
    iso_variance,
    learned_posterior,
    mm_diag_cov,
    mm_full_cov,
    mm_mean,
    moment_matched,
)
from .training import TrainConfig, train  # noqa: F401
from .sampler import ChainConfig, NoiseSchedule, gibbs_step, multilevel_gibbs, run_chain  # noqa: F401
from .evaluation import GridOracle, grid_posterior_moments, mmd, mode_coverage  # noqa: F401
from .datasets import DatasetSpec, SampleSet, generate, load_csv, save_csv  # noqa: F401
