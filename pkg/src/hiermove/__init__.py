"""Two-stage fitting of hierarchical animal-movement models: parallel
individual-level MCMC pools recombined by a tuning-free resampling chain,
with point-process (RSF) and continuous-time discrete-space (CTDS)
applications."""

from .probdist import (
    MixtureErrorParams,
    MvnParams,
    SpdFactor,
    WishartParams,
    mixture2_logpdf,
    mvn_logpdf,
    mvn_sample,
    poisson_logpmf,
    rotate_cov,
    substream,
    wishart_sample,
)
from .stage1 import (
    AdaptiveRWMH,
    ChainConfig,
    DrawMatrix,
    IndividualModel,
    adaptive_rwmh_fit,
    load_draws,
    run_parallel,
    save_draws,
)
from .stage2 import (
    FullHierarchySampler,
    HyperPriors,
    Stage2Output,
    Stage2Resampler,
    gibbs_update_mu,
    gibbs_update_sigma_inv,
    mh_resample_beta,
    mu_full_conditional,
    resample_log_ratio,
    run_full_hierarchy,
    run_stage2,
)
from .rsf import (
    PointSet,
    RasterGrid,
    RsfDesign,
    bin_counts,
    make_rsf_design,
    make_rsf_model,
    rsf_loglik,
    simulate_point_process,
)
from .fmm import (
    BSplineBasis,
    FunctionalMovementModel,
    PathDraws,
    build_basis,
    fit_fmm,
    impute_paths,
)
from .ctds import (
    CellPath,
    CtdsDesign,
    StayMovePairs,
    ctds_loglik,
    discretize_path,
    encode_multinomial,
    extract_pairs,
    make_ctds_design,
    make_ctds_model,
    simulate_ctds,
)
from .diagnostics import ChainSummary, compare_runs, effective_sample_size, summarize

__version__ = "0.1.0"
