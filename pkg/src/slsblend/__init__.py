"""Blended FIR system level controllers: synthesis, realization and simulation."""
from .controller import AntiWindupController, IntegralController, SlController, internal_dynamics_sim, min_tau
from .core import BlendClm, FirClm, LinearSystem, blend_apply, load_blend, save_blend, validate_fir_clm
from .diststats import DisturbanceModel, alpha_moments
from .synthesis import (LocalityMask, SafetySpec, SynthesisInfeasible, build_locality_mask, synthesize_blend,
                        synthesize_linear)

__version__ = "0.1.0"
