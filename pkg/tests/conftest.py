import numpy as np
import pytest
import torch

from mathrec.encoder import FeatureMap


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)


def make_feature_map(b=1, c=8, h=3, w=4, mask=None, dtype=torch.float32, seed=0):
    g = torch.Generator().manual_seed(seed)
    values = torch.randn(b, c, h, w, generator=g, dtype=dtype)
    if mask is None:
        mask = torch.ones(b, 1, h, w, dtype=dtype)
    values = values * mask
    return FeatureMap(values=values, mask=mask)
