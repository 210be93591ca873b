"""Sharp asymptotics of naive mean-field variational inference in linear regression."""

from .channel import ChannelLaw, QuadratureScheme, expect_bz, sample_channel
from .errors import (ConfigError, NMFError, NoConvergence, NonFinite, NonNormalizable,
                     NonPositiveB, NotConvexCertified, NotGaussianPrior, OutOfRange,
                     OutOfSupport, VerificationFailed)
from .fixedpoint import FixedPointSolution, fp_step, phi, psi, solve, verify
from .meanfield import ConvexityReport, ProblemSpec, F, F_prime, F_second, G, check_convexity
from .predictions import (Predictions, conditional_quantile, corrected_interval, predict,
                          predict_coverage, predict_mse, predict_neg_log_z)
from .priors import (GaussianMeanZero, GaussianSpikeSlab, GridDensity, ThreePointDiscrete,
                     prior_from_dict)
from .prox import eta, eta_inverse, eta_prime

__version__ = "0.1.0"
