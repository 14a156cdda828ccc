"""Numerical lab for 2D stochastic Navier-Stokes with linear multiplicative Ito noise."""
from .errors import (ConfigError, DataError, DimensionError, DivergenceError, FormatError,
                     HypothesisError, ParameterError, RangeError, SNSEError, StabilityError)
from .fields import (ForcingSpec, Grid, SpectralField, divergence_residual, grad_norm, inner,
                     leray_project, nonlinear_term, normalized, random_divfree_field,
                     reality_residual, single_mode_field, sobolev_norm, stokes_apply,
                     taylor_green, trilinear_b)
from .harness import ExperimentConfig, RunReport, load_config, run_experiment, validate_config
from .integrator import (CocycleParams, TrajectoryRecord, cocycle, conjugation_check,
                         integrate_cnse, integrate_snse_em, step_cnse, step_snse_em)
from .io import read_field_snapshot, write_field_snapshot
from .measures import (CylindricalFunctional, GaussianBump, MeasureSampleSpec, PolyCutoff,
                       capped_norm, cesaro_observable, ito_balance_residual, liouville_balance,
                       mixing_test, transition_expectation)
from .noise import (OUTrajectory, WienerPath, ou_trajectory, sample_wiener_path, shift_path,
                    z_factor)
from .rds import (absorbing_radius, apriori_bounds, forcing_hypothesis_check, pullback_ensemble,
                  pullback_orbit, stability_experiment)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
