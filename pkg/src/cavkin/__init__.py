"""Cavity-modified chemical kinetics: vibrational strong coupling simulation kit."""

from .units import (
    AU_TO_FS,
    CM_TO_HARTREE,
    FS_TO_AU,
    HARTREE_TO_CM,
    KB_HARTREE,
    beta_from_temperature,
)

__all__ = [
    "AU_TO_FS",
    "CM_TO_HARTREE",
    "FS_TO_AU",
    "HARTREE_TO_CM",
    "KB_HARTREE",
    "beta_from_temperature",
]

__version__ = "0.1.0"
