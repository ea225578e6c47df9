"""Unit conversions. All internal math is done in Hartree atomic units."""

from __future__ import annotations

# wavenumber per Hartree
HARTREE_TO_CM = 219474.6313632
CM_TO_HARTREE = 1.0 / HARTREE_TO_CM

# femtoseconds per atomic time unit
AU_TO_FS = 0.02418884254
FS_TO_AU = 1.0 / AU_TO_FS

# Boltzmann constant in Hartree / K
KB_HARTREE = 3.166811563e-6


def beta_from_temperature(temperature_k: float) -> float:
    """Inverse temperature in atomic units for a temperature in kelvin."""
    if temperature_k <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature_k} K")
    return 1.0 / (KB_HARTREE * temperature_k)


def cm_to_au(value_cm: float) -> float:
    return value_cm * CM_TO_HARTREE


def au_to_cm(value_au: float) -> float:
    return value_au * HARTREE_TO_CM


def fs_to_au(value_fs: float) -> float:
    return value_fs * FS_TO_AU


def au_to_fs(value_au: float) -> float:
    return value_au * AU_TO_FS
