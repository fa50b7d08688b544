"""Shared fixtures for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from stackdenoise.stack import ImageStack


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_textured_image(rng, h=48, w=48, dtype=np.float64):
    """A smooth-ish test image with structure at several scales.

    Pure noise images make SSIM comparisons degenerate (all structure
    terms tiny); mixing low-frequency sinusoids with mild noise keeps the
    metric in a meaningful regime.
    """
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = (
        0.5 * np.sin(2 * np.pi * yy / 17.0)
        + 0.3 * np.cos(2 * np.pi * (xx + 0.4 * yy) / 11.0)
        + 0.2 * rng.standard_normal((h, w))
    )
    return img.astype(dtype)


@pytest.fixture
def textured_image(rng):
    return make_textured_image(rng)


def make_random_stack(rng, n_planes=6, h=16, w=16, stack_id="s0"):
    return ImageStack(rng.standard_normal((n_planes, h, w)), id=stack_id)


@pytest.fixture
def random_stack(rng):
    return make_random_stack(rng)
