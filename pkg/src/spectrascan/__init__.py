"""Spectral time-lapse analysis of transformer weight matrices.

Submodules:
  tensor_io    checkpoint parsing and parameter-name mapping
  spectra      per-matrix singular-value metrics
  timelapse    spatiotemporal log assembly and wave/profile analyses
  fits         regression and rank-statistics kernel
  twotimescale relaxation-model simulator and prediction checks
  prune        zone-aware layer-removal planning
  warmup       prescribed-spectrum matrix synthesis
  refdata      bundled reference measurements for comparison
  plots        figure rendering for the CLI report paths
  cli          command-line entry point
"""

__version__ = "0.1.0"
