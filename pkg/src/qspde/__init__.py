"""Finite-difference laboratory for quasilinear stochastic parabolic equations."""

from .domain import Interval, LShape, Rectangle, SpatialGrid, approx_domains, build_cutoff, make_grid
from .operators import CoefficientField, assemble, mollify, validate_ellipticity
from .noise import NoisePath, NoiseSpectrum, build_spectrum, sample_ito_process, sample_path
from .nonlin import NonlinearCoefficients, audit_hypotheses, build_coefficients, frozen_coefficients
from .norms import SpaceTimeField, dual_sharp_upper, h1_norm, lpq_norm, sharp_norm, theta_dual_upper
from .green import GaussianEnvelope, GreenTable, apply_U, check_envelope, compute_green
from .solver import Problem, TrajectoryField, integrate, picard_solve

__version__ = "0.1.0"
