"""Recovery of sparse binary vectors from noisy underdetermined linear
measurements, with an eddy-current pipe-inspection application.

Three recovery algorithms (box-relaxed l1 with EM noise estimation, a
mean-field variational posterior, and approximate message passing) share
one multi-channel measurement model; a benchmark harness scores them
against split-Bregman and SBL baselines; the eddy subpackage maps the
machinery onto defect imaging of a conducting pipe.
"""

from .amp import AmpConfig, recover_amp
from .baselines import BaselineConfig, BaselineResult, sbl, split_bregman
from .bench import (ExperimentSpec, RipEstimate, SweepResult, SweepRow,
                    brute_force_oracle, estimate_rip_constants,
                    recovery_constant, run_sweep, write_sweep_csv,
                    write_sweep_svg)
from .convex import ConvexSolverConfig, recover_convex_em
from .errors import BitrecError
from .meanfield import MeanFieldConfig, MeanFieldState, elbo, recover_mean_field
from .model import (Channel, MeasurementSet, PriorConfig, RecoveryResult,
                    iou, measurement_set, support_of, validate)
from .serialize import (read_brec, read_csv_bundle, write_brec,
                        write_csv_bundle)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BitrecError",
    "Channel", "MeasurementSet", "PriorConfig", "RecoveryResult",
    "measurement_set", "validate", "support_of", "iou",
    "read_brec", "write_brec", "read_csv_bundle", "write_csv_bundle",
    "ConvexSolverConfig", "recover_convex_em",
    "MeanFieldConfig", "MeanFieldState", "elbo", "recover_mean_field",
    "AmpConfig", "recover_amp",
    "BaselineConfig", "BaselineResult", "split_bregman", "sbl",
    "ExperimentSpec", "SweepRow", "SweepResult", "RipEstimate",
    "run_sweep", "brute_force_oracle", "estimate_rip_constants",
    "recovery_constant", "write_sweep_csv", "write_sweep_svg",
]
