"""Stochastic tropical-cyclone precipitation fields in storm-centred polar
coordinates: EOF mean with random-forest trends, harmonic residual process,
gamma anamorphosis, plus predictor extraction and ensemble verification."""

__version__ = "0.1.0"

from .core import (FieldStack, FormatError, GridSpec, InputError, NumericalError, PolarField,
                   PolarGridSpec, StormTrack, dist_to_coast, gc_distance, to_storm_polar)
from .io import read_field_stack, read_track, write_field_stack, write_track
from .model import FitConfig, FittedModel, load_model, save_model
from .pipeline import cross_validate, fit_model, simulate_event

__all__ = [
    "FieldStack", "FormatError", "GridSpec", "InputError", "NumericalError", "PolarField",
    "PolarGridSpec", "StormTrack", "dist_to_coast", "gc_distance", "to_storm_polar",
    "read_field_stack", "read_track", "write_field_stack", "write_track",
    "FitConfig", "FittedModel", "load_model", "save_model",
    "cross_validate", "fit_model", "simulate_event",
]
