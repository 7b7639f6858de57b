"""Shared fixtures: a small desk-sized probe geometry and simulated cubes.

The geometry is deliberately tiny (24 elements, 32 lines, 96 depth samples)
so that simulation, classical targets, and training all run in seconds
while still exercising aperture walking, focusing, and speckle statistics.
"""

from __future__ import annotations

import numpy as np
import pytest

from switchbeam import (ArrayGeometry, Phantom, PulseModel, RegionSpec,
                        rf_to_aperture, sample_diffuse_scatterers,
                        simulate_rf)

DESK_GEOMETRY = dict(
    element_count=24,
    pitch=0.3e-3,
    sound_speed=1540.0,
    sampling_freq=16.0e6,
    center_freq=4.0e6,
    aperture_size=16,
    scan_lines=32,
    depth_samples=96,
    focal_depth=2.3e-3,
)

TISSUE_REGION = dict(
    label="tissue",
    shape="rectangle",
    center_lateral=0.0,
    center_axial=2.5e-3,
    width=2.6e-3,
    height=3.8e-3,
    echogenicity=1.0,
    density=40.0,
)


@pytest.fixture(scope="session")
def desk_geom() -> ArrayGeometry:
    return ArrayGeometry(**DESK_GEOMETRY)


@pytest.fixture(scope="session")
def pulse() -> PulseModel:
    return PulseModel(center_freq=DESK_GEOMETRY["center_freq"],
                      fractional_bandwidth=0.6, length_cycles=4.0)


@pytest.fixture(scope="session")
def point_phantom() -> Phantom:
    return Phantom(scatterers=np.array([[0.0, 2.3e-3, 1.0]]))


@pytest.fixture(scope="session")
def point_cube(desk_geom, pulse, point_phantom):
    return simulate_rf(desk_geom, point_phantom, pulse)


@pytest.fixture(scope="session")
def point_aperture(point_cube):
    return rf_to_aperture(point_cube)


def speckle_phantom(seed: int) -> Phantom:
    base = Phantom(regions=[RegionSpec(**TISSUE_REGION)])
    return sample_diffuse_scatterers(base, seed)


@pytest.fixture(scope="session")
def speckle_cube(desk_geom, pulse):
    return simulate_rf(desk_geom, speckle_phantom(7), pulse)


@pytest.fixture(scope="session")
def speckle_aperture(speckle_cube):
    return rf_to_aperture(speckle_cube)


def anechoic_phantom(seed: int) -> Phantom:
    """Speckle tissue with a scatterer-free disk punched out of it."""
    cyst = RegionSpec(label="cyst", shape="disk", center_lateral=0.0,
                      center_axial=2.3e-3, radius=0.55e-3,
                      echogenicity=0.0, density=0.0, anechoic=True)
    base = Phantom(regions=[RegionSpec(**TISSUE_REGION), cyst])
    return sample_diffuse_scatterers(base, seed)


# Wider probe for statistical image-quality tests.  The desk grid maps its
# 32 lines onto only 9 distinct lateral positions, so neighbouring image
# columns are bitwise copies; patch-based filters then group duplicate
# patches whose shared texture survives low-rank shrinkage almost intact.
# This variant walks one element per line (33 unique positions) and images
# a larger field, giving fully developed, laterally decorrelated speckle.
WIDE_GEOMETRY = dict(
    element_count=48,
    pitch=0.3e-3,
    sound_speed=1540.0,
    sampling_freq=16.0e6,
    center_freq=4.0e6,
    aperture_size=16,
    scan_lines=33,
    depth_samples=128,
    focal_depth=3.0e-3,
)

WIDE_TISSUE_REGION = dict(
    label="tissue",
    shape="rectangle",
    center_lateral=0.0,
    center_axial=3.2e-3,
    width=11.0e-3,
    height=5.4e-3,
    echogenicity=1.0,
    density=200.0,
)

# Interior of the tissue rectangle, clear of edge roll-off, in image indices.
WIDE_TISSUE_SLICE = (slice(40, 110), slice(4, 29))


def wide_speckle_phantom(seed: int) -> Phantom:
    base = Phantom(regions=[RegionSpec(**WIDE_TISSUE_REGION)])
    return sample_diffuse_scatterers(base, seed)


def wide_anechoic_phantom(seed: int) -> Phantom:
    """Wide-probe speckle tissue with a scatterer-free disk at the focus."""
    cyst = RegionSpec(label="cyst", shape="disk", center_lateral=0.0,
                      center_axial=3.0e-3, radius=0.9e-3,
                      echogenicity=0.0, density=0.0, anechoic=True)
    base = Phantom(regions=[RegionSpec(**WIDE_TISSUE_REGION), cyst])
    return sample_diffuse_scatterers(base, seed)


@pytest.fixture(scope="session")
def wide_geom() -> ArrayGeometry:
    return ArrayGeometry(**WIDE_GEOMETRY)


@pytest.fixture(scope="session")
def wide_speckle_cube(wide_geom, pulse):
    return simulate_rf(wide_geom, wide_speckle_phantom(7), pulse)


@pytest.fixture(scope="session")
def wide_speckle_aperture(wide_speckle_cube):
    return rf_to_aperture(wide_speckle_cube)


@pytest.fixture(scope="session")
def fwhm_geom() -> ArrayGeometry:
    """Nine-line variant of the desk probe: d_l = l, so every scan line has
    a distinct lateral position and beam-width measurements are well posed
    (the 32-line grid maps several lines to identical positions, which the
    unique-peak contract of fwhm_lateral rejects)."""
    return ArrayGeometry(**{**DESK_GEOMETRY, "scan_lines": 9})


@pytest.fixture(scope="session")
def fwhm_point_cube(fwhm_geom, pulse, point_phantom):
    return simulate_rf(fwhm_geom, point_phantom, pulse)
