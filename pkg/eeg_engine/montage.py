"""The 21-electrode 10-20 clinical montage and its 2D scalp projection."""

from typing import Dict, List, Tuple

STANDARD_1020: List[str] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8",
    "T3", "C3", "Cz", "C4", "T4",
    "T5", "P3", "Pz", "P4", "T6",
    "O1", "O2", "A1", "A2",
]

# Unit circle through Fp/T/O ring, nose up (+y), left hemisphere at -x.
# Ear references sit just outside the head outline.
SCALP_COORDINATES: Dict[str, Tuple[float, float]] = {
    "Fp1": (-0.309, 0.951),
    "Fp2": (0.309, 0.951),
    "F7": (-0.809, 0.588),
    "F3": (-0.410, 0.510),
    "Fz": (0.000, 0.500),
    "F4": (0.410, 0.510),
    "F8": (0.809, 0.588),
    "T3": (-1.000, 0.000),
    "C3": (-0.500, 0.000),
    "Cz": (0.000, 0.000),
    "C4": (0.500, 0.000),
    "T4": (1.000, 0.000),
    "T5": (-0.809, -0.588),
    "P3": (-0.410, -0.510),
    "Pz": (0.000, -0.500),
    "P4": (0.410, -0.510),
    "T6": (0.809, -0.588),
    "O1": (-0.309, -0.951),
    "O2": (0.309, -0.951),
    "A1": (-1.150, 0.000),
    "A2": (1.150, 0.000),
}

OCCIPITAL = ["O1", "O2"]
