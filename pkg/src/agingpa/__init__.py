"""Preferential attachment trees with aging and fitness as continuous-time
branching processes: Malthusian parameters, limiting degree distributions,
saddle-point asymptotics and an exact simulator."""
from .model import (
    AffineWeights, BoundedUniform, ConstantAging, CustomFitness, CustomWeights, Degenerate,
    ExponentialAging, ExponentialFitness, GeneralExponential, LognormalAging, Pareto, PowerAging,
    PowerWeights, ProcessSpec, SubExponential, TabulatedAging, TimeChangedFitness,
)
from .malthus import ExplosiveError, SubcriticalError, malthusian, supercriticality

__all__ = [
    "AffineWeights", "BoundedUniform", "ConstantAging", "CustomFitness", "CustomWeights", "Degenerate",
    "ExponentialAging", "ExponentialFitness", "GeneralExponential", "LognormalAging", "Pareto",
    "PowerAging", "PowerWeights", "ProcessSpec", "SubExponential", "TabulatedAging", "TimeChangedFitness",
    "ExplosiveError", "SubcriticalError", "malthusian", "supercriticality",
]
