"""Semi-analytical eddy-current forward model for a conducting pipe with an
inner probe, adjoint sensitivities, measurement-matrix assembly, and
log-odds defect imaging."""

from .bessel import ScaledBessel, bessel_ik, bessel_ik_scaled
from .imaging import (ImagingSetup, VoxelGrid, VoxelImage, image_pipe,
                      load_pipe_config, merge_logodds, new_image,
                      probabilities, run_setup, write_image_csv,
                      write_image_metadata, write_image_svg)
from .pipe import (CoilSpec, PipeModel, QuadratureConfig, SensorSpec,
                   SpectralCoefficients, UnitModes, coil_spectrum,
                   coil_spectrum_table, evaluate_fields, interface_residual,
                   kappa_grid, loop_bradial, sensor_spectrum,
                   solve_interface_coefficients, solve_unit_modes)
from .sensitivity import assemble_phi, build_sensitivity

__all__ = [
    "ScaledBessel", "bessel_ik", "bessel_ik_scaled",
    "PipeModel", "SensorSpec", "CoilSpec", "QuadratureConfig",
    "SpectralCoefficients", "UnitModes", "kappa_grid", "loop_bradial",
    "coil_spectrum", "coil_spectrum_table", "sensor_spectrum",
    "solve_interface_coefficients", "solve_unit_modes", "evaluate_fields",
    "interface_residual", "build_sensitivity", "assemble_phi",
    "VoxelGrid", "VoxelImage", "new_image", "probabilities",
    "merge_logodds", "image_pipe", "ImagingSetup", "run_setup",
    "load_pipe_config", "write_image_csv", "write_image_svg",
    "write_image_metadata",
]
