import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amrmc.paths import (
    GENERATOR_METHOD,
    ExerciseGrid,
    ProcessKind,
    SeedCoordinates,
    derive_stream,
    sample_paths,
)

GRID = ExerciseGrid((0.5, 1.0, 1.5))


def test_grid_validation():
    with pytest.raises(ValueError):
        ExerciseGrid(())
    with pytest.raises(ValueError):
        ExerciseGrid((0.0, 1.0))
    with pytest.raises(ValueError):
        ExerciseGrid((1.0, 1.0))
    with pytest.raises(ValueError):
        ExerciseGrid((1.0, float("inf")))
    assert GRID.m == 3
    assert GRID.prefix(2).times == (0.5, 1.0)
    assert GRID.max_ratio() == 2.0
    assert ExerciseGrid((2.0,)).max_ratio() == 1.0


def test_origin_mismatch_rejected():
    grid = ExerciseGrid((1.0,), t0_state=0.0)
    sample_paths("brownian", grid, 3, SeedCoordinates(1))
    with pytest.raises(ValueError):
        sample_paths("geometric", grid, 3, SeedCoordinates(1))


def test_process_aliases():
    assert ProcessKind.parse("lognormal") is ProcessKind.GEOMETRIC
    assert ProcessKind.parse("standard_brownian") is ProcessKind.BROWNIAN
    with pytest.raises(ValueError):
        ProcessKind.parse("heston")


def test_seed_validation():
    with pytest.raises(ValueError):
        SeedCoordinates(-1)
    with pytest.raises(ValueError):
        SeedCoordinates(2**64)
    with pytest.raises(ValueError):
        SeedCoordinates(1, (-3,))
    s = SeedCoordinates(7, (1, 2)).child(3)
    assert s.labels == (1, 2, 3)
    assert SeedCoordinates.from_dict(s.to_dict()) == s


def test_zero_paths():
    batch = sample_paths("geometric", GRID, 0, SeedCoordinates(1))
    assert batch.states.shape == (0, 3)


def test_identical_seeds_identical_paths():
    a = sample_paths("brownian", GRID, 1000, SeedCoordinates(42, (1,)))
    b = sample_paths("brownian", GRID, 1000, SeedCoordinates(42, (1,)))
    c = sample_paths("brownian", GRID, 1000, SeedCoordinates(42, (2,)))
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 300), chunks=st.integers(1, 9), workers=st.integers(1, 4))
def test_chunking_and_workers_do_not_change_paths(n, chunks, workers):
    seed = SeedCoordinates(3, (5,))
    ref = sample_paths("geometric", GRID, n, seed).states
    got = sample_paths("geometric", GRID, n, seed, chunks=chunks, workers=workers).states
    assert np.array_equal(ref, got)


def test_rows_are_prefix_stable():
    # row i depends only on (key, i): a bigger batch starts with the smaller one
    seed = SeedCoordinates(11)
    small = sample_paths("brownian", GRID, 10, seed).states
    big = sample_paths("brownian", GRID, 25, seed).states
    assert np.array_equal(small, big[:10])


def test_stream_random_access():
    stream = derive_stream(9, (1, 2))
    whole = stream.raw(0, 64)
    for start in (0, 1, 3, 4, 17, 63):
        assert np.array_equal(stream.raw(start, 64 - start), whole[start:])
    u = stream.uniforms(0, 10000)
    assert np.all((u > 0) & (u < 1))


def test_metadata_records_generator():
    batch = sample_paths("brownian", GRID, 4, SeedCoordinates(1, (2,)))
    meta = batch.metadata()
    assert meta["generator"] == GENERATOR_METHOD
    assert meta["seed"] == {"base_seed": 1, "labels": [2]}
    assert not batch.states.flags.writeable


def test_brownian_moments():
    n = 200_000
    s = sample_paths("brownian", GRID, n, SeedCoordinates(2024)).states
    t = np.array(GRID.times)
    mean = s.mean(axis=0)
    assert np.all(np.abs(mean) < 4 * np.sqrt(t / n))
    cov = np.cov(s, rowvar=False)
    expected = np.minimum.outer(t, t)
    # standard error of a covariance estimate is about sqrt(var_i var_j + cov^2) / sqrt(n)
    se = np.sqrt(np.outer(t, t) + expected**2) / math.sqrt(n)
    assert np.all(np.abs(cov - expected) < 4 * se)


def test_increments_independent_normal():
    n = 200_000
    s = sample_paths("brownian", GRID, n, SeedCoordinates(5)).states
    inc = np.diff(np.column_stack([np.zeros(n), s]), axis=1) / np.sqrt(np.diff([0.0, *GRID.times]))
    corr = np.corrcoef(inc, rowvar=False)
    assert np.all(np.abs(corr - np.eye(3)) < 4 / math.sqrt(n))
    assert abs(np.mean(inc**4) - 3) < 4 * math.sqrt(96 / (3 * n))


def test_geometric_is_unit_mean_martingale():
    n = 400_000
    s = sample_paths("geometric", GRID, n, SeedCoordinates(6)).states
    assert np.all(s > 0)
    for j, t in enumerate(GRID.times):
        se = math.sqrt(math.expm1(t) / n)
        assert abs(s[:, j].mean() - 1.0) < 4 * se
        # log S(t) has mean -t/2 and variance t
        log_s = np.log(s[:, j])
        assert abs(log_s.mean() + t / 2) < 4 * math.sqrt(t / n)
        assert abs(log_s.var() - t) < 4 * t * math.sqrt(2 / n)
