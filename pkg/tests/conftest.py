"""Shared fixtures: cached forward recordings and reduced-geometry helpers.

Recordings are expensive (the production ones run the forward solver on the
fine mesh), so they are generated once into tests/.cache and reloaded on
later runs.  Everything in the cache is reproducible: delete the directory
to force regeneration.
"""

import dataclasses
import os

import numpy as np
import pytest

from convexwave.forward import (WaveRecording, reduced_config, run_forward,
                                standard_config)
from convexwave.grid import ScalarField
from convexwave.recon import make_phantom

CACHE = os.path.join(os.path.dirname(__file__), ".cache")

# name -> (phantom or None for c=1, preset, h, dt, duration, pulse_eps,
#          aux_planes, energy_stride)
RECORDINGS = {
    # forward-physics probe: resolved pulse on the production geometry
    "probe_h16": (None, "paper", 1 / 16, 0.025, 6.5, 0.30, 3, 5),
    # production data for the reconstruction criteria (fine-mesh forward)
    "test1_h32": ("test1", "paper", 1 / 32, 0.0125, 6.5, 0.01, 9, 0),
    "test5_h32": ("test5", "paper", 1 / 32, 0.0125, 6.7, 0.01, 9, 0),
    "test4_h32": ("test4", "paper", 1 / 32, 0.01, 6.6, 0.01, 9, 0),
    # small closed-box run for unit tests (seconds, not minutes)
    "reduced_c1": (None, "reduced", 1 / 16, 0.02, 2.4, 0.08, 5, 1),
}


def _build(name: str) -> WaveRecording:
    phantom, preset, h, dt, duration, eps, aux, estride = RECORDINGS[name]
    maker = standard_config if preset == "paper" else reduced_config
    cfg = dataclasses.replace(maker(h, dt, duration, aux), pulse_eps=eps)
    if phantom is None:
        c = ScalarField(cfg.box, np.ones(cfg.box.dims))
    else:
        c = make_phantom(phantom).field(cfg.box)
    return run_forward(c, cfg, energy_stride=estride)


def get_recording(name: str) -> WaveRecording:
    path = os.path.join(CACHE, name)
    if not os.path.exists(os.path.join(path, "recording.json")):
        rec = _build(name)
        os.makedirs(path, exist_ok=True)
        rec.save(path)
        return rec
    return WaveRecording.load(path)


@pytest.fixture(scope="session")
def recording():
    """Factory fixture: recording('test1_h32') etc., cached on disk."""
    os.makedirs(CACHE, exist_ok=True)
    keep = os.path.join(CACHE, ".gitignore")
    if not os.path.exists(keep):
        with open(keep, "w") as f:
            f.write("*\n")
    return get_recording


@pytest.fixture(scope="session")
def rec_reduced(recording) -> WaveRecording:
    """Small c=1 closed-box recording used across the unit tests."""
    return recording("reduced_c1")
