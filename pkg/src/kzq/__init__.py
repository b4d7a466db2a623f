"""Defect formation across the linear-to-zigzag transition of ion chains.

Submodules
----------
quench        quench protocols epsilon(t) and local detuning
ef_core       extended-formulation defect predictor
kzm_baseline  classic Kibble-Zurek power laws
trap          trap geometry and critical frequencies
langevin_sim  Langevin molecular dynamics of the chain
experiments   sweeps, fits and protocol comparisons
"""

from .ef_core import (
    DefectEstimate,
    FreezeOut,
    HarmonicChain,
    ScalingParams,
    defect_density,
    freeze_out_time,
    kzm_freeze_out,
    xi_hat,
    xi_oscillation_closed_form,
)
from .quench import Kind, QuenchProtocol, delta_at, epsilon_at, epsilon_rate

__version__ = "0.1.0"

__all__ = [
    "DefectEstimate",
    "FreezeOut",
    "HarmonicChain",
    "Kind",
    "QuenchProtocol",
    "ScalingParams",
    "defect_density",
    "delta_at",
    "epsilon_at",
    "epsilon_rate",
    "freeze_out_time",
    "kzm_freeze_out",
    "xi_hat",
    "xi_oscillation_closed_form",
]
