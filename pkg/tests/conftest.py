import numpy as np
import pytest

from poolforge.potential import DescriptorConfig, ModelParams
from poolforge.structures import Structure


@pytest.fixture
def cfg():
    return DescriptorConfig()


@pytest.fixture
def params(cfg):
    return ModelParams.random(
        n_species=3, embed_dim=4, hidden_dim=8, n_centers=cfg.n_centers, seed=0
    )


def random_structure(rng, n_atoms=5, n_species=3, box=3.0, min_dist=0.7):
    """Compact random structure with a minimum pairwise separation."""
    while True:
        pos = rng.uniform(0.0, box, (n_atoms, 3))
        d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        np.fill_diagonal(d, np.inf)
        if d.min() >= min_dist:
            return Structure(rng.integers(0, n_species, n_atoms), pos)


def random_rotation(rng):
    """Uniform random rotation matrix via QR with positive diagonal."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diagonal(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
