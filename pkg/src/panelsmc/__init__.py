"""panelsmc: plug-and-play likelihood inference for panels of partially
observed Markov processes.

The package provides a bootstrap particle filter, iterated filtering for
panels (with a marginalized variant), Monte-Carlo-adjusted profile
confidence intervals, a mechanistic host-parasite-food model family,
negative binomial benchmark regressions, and a CLI tying them together.
"""

__version__ = "0.1.0"

from .benchmarks import (
    AicRow,
    GlmmFit,
    GlmmSpec,
    aic,
    aic_table,
    conditional_loglik_compare,
    glmm_fit,
    glmm_loglik,
    score_external_predictions,
)
from .daphnia import (
    MODEL_NAMES,
    TREATMENTS,
    default_params,
    initial_densities,
    model_variant,
    treatment_preset,
)
from .errors import ConfigError, DataError, FilterFailureError, NumericsError, PanelSmcError
from .estimators import NegBinTrendModel, PanelIteratedFilter, ParticleFilter, StagedSearch
from .measures import MEAN_FLOOR, nbinom_logpmf, nbinom_rvs
from .mif import (
    CoolingSchedule,
    MifSettings,
    ParamSwarm,
    SearchRecord,
    StagedSearchResult,
    cooling_factor,
    gaussian_perturbation,
    mif2_single,
    pif_run,
    staged_search,
)
from .panel import (
    PanelDataset,
    PanelLoglik,
    PanelParams,
    PanelPomp,
    PanelUnit,
    assemble_unit_params,
    log_mean_exp,
    log_mean_exp_se,
    panel_loglik,
)
from .params import (
    ParamSpec,
    ParamVector,
    from_estimation_scale,
    to_estimation_scale,
)
from .pfilter import (
    FilterResult,
    ParticleSwarm,
    pfilter,
    effective_sample_size,
    systematic_resample,
)
from .pomp import (
    LatentState,
    Observation,
    PompModel,
    SdeModel,
    rprocess_subdivided,
    simulate,
)
from .profile import (
    McapResult,
    ProfilePoint,
    ProfileTask,
    mcap,
    pin_parameter,
    poor_mans_profile,
    profile_design,
)
from .rngs import derive_rng, derive_unit_rng, mix_seed
