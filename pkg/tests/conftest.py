import numpy as np
import pytest

from prismflow.model import ModelConfig, PrismFlowModel
from prismflow.numcore import RngStream


@pytest.fixture
def tiny_model():
    """S=8, D=2, d_z=4, K=2, hidden 8."""
    cfg = ModelConfig(seq_len=8, channels=2, n_experts=2, latent_dim=4,
                      hidden_dim=8, dec_hidden=8, router_hidden=8)
    return PrismFlowModel.init(cfg, RngStream(0))


@pytest.fixture
def tiny_batch():
    gen = RngStream(1).generator()
    x1 = gen.standard_normal((4, 8, 2))
    x0 = gen.standard_normal((4, 8, 2))
    t = gen.uniform(size=4)
    return x0, x1, t
