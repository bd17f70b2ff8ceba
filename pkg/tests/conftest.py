import numpy as np
import pytest

from chaoscast.model import ModelConfig, param_shapes


@pytest.fixture
def tiny_cfg():
    return ModelConfig(n_layers=2, d_model=16, n_heads=2, context_len=32)


def generic_params(cfg: ModelConfig, seed: int = 7) -> dict:
    """A generic (non-initialization) parameter point: attention is far
    from uniform, so no gradient is degenerately small."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            params[name] = 1.0 + 0.2 * rng.standard_normal(shape)
        elif leaf.startswith("b"):
            params[name] = 0.1 * rng.standard_normal(shape)
        else:
            params[name] = 0.25 * rng.standard_normal(shape)
    return params
