"""Gibbs and collapsed Gibbs sampling for Gaussian crossed random effects,
with exact convergence-rate analysis."""

from .model import (
    DesignClass,
    IncidenceTable,
    Observation,
    Precisions,
    classify_design,
    from_arrays,
    ingest_observations,
    read_csv,
    write_csv,
)
from .samplers import (
    Chain,
    ModelState,
    SamplerConfig,
    Scheme,
    collapsed_sweep,
    cond_global,
    cond_global_collapsed,
    cond_level,
    gibbs_sweep,
    px_transform,
    run_chain,
    run_chains,
    update_precisions,
)
from .datagen import (
    gen_balanced_cells,
    gen_balanced_levels_K2,
    gen_disconnected,
    gen_mcar,
)
from .datasets import load_insteval
from .spectral import (
    RateReport,
    aux_rate,
    mean_map,
    mixing_time,
    numeric_rate,
    rate_report,
    residual_rate_K2,
    theory_rate,
)

__version__ = "0.1.0"
