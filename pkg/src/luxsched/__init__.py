"""Active co-located illumination scheduling: relighting, exact schedule oracle, imitation policy."""

from .energy import CostTensors, EnergyModel, IntensityGrid, build_cost_tensors, power
from .imaging import Decomposition, clip_sensor, decompose_paired, psnr, relight, ssim
from .oracle import Schedule, brute_force_ois, evaluate_schedule, solve_ois

__version__ = "0.1.0"

__all__ = [
    "CostTensors",
    "Decomposition",
    "EnergyModel",
    "IntensityGrid",
    "Schedule",
    "brute_force_ois",
    "build_cost_tensors",
    "clip_sensor",
    "decompose_paired",
    "evaluate_schedule",
    "power",
    "psnr",
    "relight",
    "solve_ois",
    "ssim",
]
