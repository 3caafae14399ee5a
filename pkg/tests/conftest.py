import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from zs3.embeddings import fixture_catalog, fixture_path, load_embeddings  # noqa: E402
from zs3.scene_data import WorldConfig, build_world, make_split, synthesize  # noqa: E402


@pytest.fixture(scope="session")
def emb():
    return load_embeddings(fixture_path(), fixture_catalog())


@pytest.fixture(scope="session")
def small_data(emb):
    """A quick world: 24 training scenes of 32x32, K = 2."""
    cfg = WorldConfig(height=32, width=32, max_rect=16, min_rect=6, min_region=20)
    world = build_world(emb, cfg, seed=11)
    split = make_split(emb.catalog, 2, seed=11)
    return world, synthesize(world, emb, split, 24, 6, 8, seed=11)
