"""Stretched Brownian motion between discrete marginals.

The line is the main setting: :func:`solve_wot` and
:func:`solve_wot_1d_by_components` find the optimal martingale kernel,
:func:`fit_sbm` builds the Bass representation on each irreducible
component and :func:`simulate` samples its paths. Certificates live in
:mod:`sbm.verify` and the command line in :mod:`sbm.cli`.
"""

from ._core import BACKEND
from .bass import BassModel, BassOptions, MonotoneMap, bass_fixed_point, bass_from_dual, kernel_from_bass
from .decompose import ConvexOrderError, decompose, glue
from .dynamics import (
    check_scaling,
    check_time_consistency,
    fit_sbm,
    interpolate,
    localvol_chain,
    simulate,
)
from .kernel import KernelError, MartingaleKernel
from .maxcorr import gaussian_disc, maxcorr_1d, maxcorr_disc
from .measures import DiscreteMeasure, MeasureError, convex_order_1d, convex_order_lp, make_measure
from .report import CertificateReport
from .wot import WotOptions, WotSolution, solve_wot, solve_wot_1d_by_components

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BassModel",
    "BassOptions",
    "CertificateReport",
    "ConvexOrderError",
    "DiscreteMeasure",
    "KernelError",
    "MartingaleKernel",
    "MeasureError",
    "MonotoneMap",
    "WotOptions",
    "WotSolution",
    "bass_fixed_point",
    "bass_from_dual",
    "check_scaling",
    "check_time_consistency",
    "convex_order_1d",
    "convex_order_lp",
    "decompose",
    "fit_sbm",
    "gaussian_disc",
    "glue",
    "interpolate",
    "kernel_from_bass",
    "localvol_chain",
    "make_measure",
    "maxcorr_1d",
    "maxcorr_disc",
    "simulate",
    "solve_wot",
    "solve_wot_1d_by_components",
]
