"""PDMP samplers with adaptive envelope thinning."""
from .errors import (ConfigError, DiagnosticError, ModelError, PdmpError, SamplingError,
                     ThinningError)
from .model import (Dataset, MiniBatchPlan, Model, ModelSpec, load_csv_dataset, map_fit,
                    regression_curve, synth_classification, synth_regression)
from .ipp import (Envelope, LinearSegment, ThinningAudit, adjusted_rate, init_envelope,
                  propose_event, sample_linear_time)
from .samplers import (BoomerangReference, Chain, PdmpState, Preconditioner, SamplerConfig,
                       Welford, boomerang_bounce, boomerang_flow, boomerang_rate, bps_bounce,
                       bps_flow, bps_rate, precond_bounce, precond_flow, refresh_velocity,
                       run_chain, welford_warmup)
from .baselines import SgldConfig, learning_rate, run_sgld, sgld_step
from .diagnostics import (PredictiveSummary, chain_metrics, ece, entropy_histogram, ess,
                          first_principal_component, last_principal_component,
                          nll_rmse_acc, predictive_entropy, predictive_posterior)

__version__ = "0.1.0"
