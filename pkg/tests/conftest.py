"""Shared fixtures: the handful of viscous runs several test modules reuse.

Session scope keeps the suite fast; every consumer treats trajectories as
read-only.
"""
import numpy as np
import pytest

import discflux as dx


def riemann_field(grid: dx.Grid, left: float, right: float, position: float = 0.0) -> dx.Field:
    x = grid.points()[..., 0]
    return dx.Field(grid, np.where(x < position, left, right).astype(float), 0.0)


def block_field(grid: dx.Grid, lo: float, hi: float, inside: float, outside: float = 0.0) -> dx.Field:
    x = grid.points()[..., 0]
    vals = np.where((x >= lo) & (x < hi), inside, outside).astype(float)
    return dx.Field(grid, vals, 0.0)


@pytest.fixture(scope="session")
def burgers_model():
    return dx.preset("burgers")


@pytest.fixture(scope="session")
def two_flux_model():
    return dx.preset("two_flux")


@pytest.fixture(scope="session")
def fine_grid():
    return dx.Grid((-0.5,), (0.5,), (400,))


@pytest.fixture(scope="session")
def burgers_shock_traj(burgers_model, fine_grid):
    """Stationary shock: 0 on the left, 1 on the right, speed (f(1)-f(0))/1 = 0."""
    config = dx.RunConfig(
        flux=burgers_model,
        epsilon=1e-3,
        final_time=0.5,
        boundary=((0.0, 1.0),),
        output_times=tuple(np.linspace(0.0, 0.5, 129)),
    )
    return dx.run(riemann_field(fine_grid, 0.0, 1.0), config)


@pytest.fixture(scope="session")
def burgers_rarefaction_traj(burgers_model, fine_grid):
    """Expansion data 1 | 0: the entropy solution is a centered fan."""
    config = dx.RunConfig(
        flux=burgers_model,
        epsilon=1e-3,
        final_time=0.5,
        boundary=((1.0, 0.0),),
        output_times=tuple(np.linspace(0.0, 0.5, 129)),
    )
    return dx.run(riemann_field(fine_grid, 1.0, 0.0), config)


@pytest.fixture(scope="session")
def two_flux_block_traj(two_flux_model, fine_grid):
    """Block of state 1 on [0.1, 0.3) to the right of the flux jump at 0.

    By t = 0.09 the waves stay inside (0, 0.5): the interface never sees a
    state other than 0 and the boundary cells never move.
    """
    config = dx.RunConfig(
        flux=two_flux_model,
        epsilon=1e-3,
        final_time=0.09,
        boundary=0.0,
        output_times=tuple(np.linspace(0.0, 0.09, 129)),
    )
    return dx.run(block_field(fine_grid, 0.1, 0.3, 1.0), config)
