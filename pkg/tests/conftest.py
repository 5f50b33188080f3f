import numpy as np
import pytest

from nestedrisk.synthetic import random_tree


@pytest.fixture
def rng():
    return np.random.default_rng(20140905)


@pytest.fixture
def small_tree():
    # 8 stocks, 4 sub-industries, 3 industries, 2 sectors; every depth of
    # common membership is realized by some pair of stocks
    from nestedrisk.taxonomy import ClassificationTree

    return ClassificationTree.from_maps(
        [
            [0, 0, 1, 1, 2, 2, 3, 3],  # stock -> sub-industry
            [0, 0, 1, 2],              # sub-industry -> industry
            [0, 0, 1],                 # industry -> sector
        ]
    )


def make_random_tree(rng, n_stocks, **kwargs):
    return random_tree(rng, n_stocks, **kwargs)
