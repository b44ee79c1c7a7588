"""IBNR claim reserving by inclusion-probability weighting.

Reported claims are treated as a Poisson sample of all incurred claims,
with inclusion probability given by a fitted reporting-delay model. The
package provides the delay, count and severity models, the IPW / AIPW /
chain-ladder / micro-level / credibility estimators, pseudo-population
bootstrap intervals, a claims simulator with known ground truth and a
backtesting harness.
"""

from .core import (
    Claim,
    InclusionProbabilities,
    PolicyRecord,
    Portfolio,
    ValuationContext,
    odds_ratio,
    partition,
    read_portfolio_csv,
    write_portfolio_csv,
)
from .delay import (
    DelayDesign,
    HazardModel,
    average_inclusion_probability,
    build_delay_design,
    empirical_cohort_probabilities,
    fit_hazard,
    inclusion_probability,
)
from .estimators import (
    ESTIMATORS,
    ReserveEstimate,
    aipw_cl_reserve,
    aipw_reserve,
    chain_ladder,
    credibility_reserve,
    ipw_reserve,
    ml_reserve,
)
from .frequency import IbnrCountLaw, ZinbModel, expected_ibnr_count, fit_zinb, ibnr_conditional, zinb_pmf
from .severity import SeverityModel, calibrate_wbp, fit_lognormal, predict_mean
from .simulator import GroundTruth, SimConfig, simulate, true_inclusion_probability
from .synthetic import (
    PseudoPopulation,
    bootstrap_reserve,
    fixed_pseudo_population,
    geometric_pseudo_population,
    weighted_ecdf,
)
from .triangle import Triangle

__version__ = "0.1.0"

__all__ = [
    "Claim",
    "DelayDesign",
    "ESTIMATORS",
    "GroundTruth",
    "HazardModel",
    "IbnrCountLaw",
    "InclusionProbabilities",
    "PolicyRecord",
    "Portfolio",
    "PseudoPopulation",
    "ReserveEstimate",
    "SeverityModel",
    "SimConfig",
    "Triangle",
    "ValuationContext",
    "ZinbModel",
    "aipw_cl_reserve",
    "aipw_reserve",
    "average_inclusion_probability",
    "bootstrap_reserve",
    "build_delay_design",
    "calibrate_wbp",
    "chain_ladder",
    "credibility_reserve",
    "empirical_cohort_probabilities",
    "expected_ibnr_count",
    "fit_hazard",
    "fit_lognormal",
    "fit_zinb",
    "fixed_pseudo_population",
    "geometric_pseudo_population",
    "ibnr_conditional",
    "inclusion_probability",
    "ipw_reserve",
    "ml_reserve",
    "odds_ratio",
    "partition",
    "predict_mean",
    "read_portfolio_csv",
    "simulate",
    "true_inclusion_probability",
    "weighted_ecdf",
    "write_portfolio_csv",
    "zinb_pmf",
]
