"""Named geometric fixtures with their hand-derived reference values."""

from __future__ import annotations

import math

import numpy as np

from .geometry import FlatTorus2, PhasePoint, RoundSphere2
from .regions import Ball, Hole, ObservationFunction, Strip, whole_manifold

TORUS = FlatTorus2((1.0, 1.0))
SPHERE = RoundSphere2()

# transition width of the smooth cutoffs used by the fixtures
EDGE = 0.02

# omega = torus minus the closed disk B((0.5, 0.5), 0.25)
DISK_COMPLEMENT = ObservationFunction((Hole((0.5, 0.5), 0.25, 0.25 + EDGE),))
DISK_CALL = 0.25
DISK_T_UC = 0.5
DISK_T_GCC = 0.5  # longest chord of the closed disk

# omega = cap of angular radius 2 pi / 3 around the north pole
CAP_ALPHA = 2.0 * math.pi / 3.0
SPHERE_CAP = ObservationFunction((Ball((0.0, 0.0), CAP_ALPHA - EDGE, CAP_ALPHA),))
CAP_CALL = math.pi - CAP_ALPHA
CAP_T_UC = 2.0 * CAP_CALL
CAP_T_GCC = 2.0 * (math.pi - CAP_ALPHA)  # diameter arc of the complementary cap

# vertical strip with support (0.3, 0.5), plateau (0.35, 0.45)
STRIP = ObservationFunction((Strip(1, 0.3, 0.1, 0.2),))

# two crossing strips, support x1 in (0, 0.2) or x2 in (0, 0.3): the
# complement is a closed 0.8 x 0.7 rectangle
CROSSING = ObservationFunction((Strip(1, 0.0, 0.2 - 2 * EDGE, 0.2), Strip(2, 0.0, 0.3 - 2 * EDGE, 0.3)))
CROSSING_T_UC = 0.7
CROSSING_T_GCC = math.hypot(0.8, 0.7)

WHOLE_TORUS = whole_manifold(TORUS)
WHOLE_SPHERE = whole_manifold(SPHERE)


def damping_field(a=1.0):
    """b0(x) = a cos^2(pi x1): band-limited, vanishing on the line x1 = 1/2."""
    return lambda x: a * np.cos(np.pi * x[..., 0]) ** 2


def egorov_symbol(x):
    return np.cos(2 * np.pi * x[..., 0]) + 0.5 * np.sin(2 * np.pi * x[..., 1])


EGOROV_RHO = PhasePoint([0.3, 0.4], [0.6, 0.8])
EGOROV_T = 0.3

FIXTURES = {
    "disk_complement": (TORUS, DISK_COMPLEMENT),
    "sphere_cap": (SPHERE, SPHERE_CAP),
    "strip": (TORUS, STRIP),
    "crossing": (TORUS, CROSSING),
    "whole_torus": (TORUS, WHOLE_TORUS),
    "whole_sphere": (SPHERE, WHOLE_SPHERE),
}
