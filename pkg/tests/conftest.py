"""Shared fixtures: topologies, a micro model config and small datasets."""

from pathlib import Path
from unittest.mock import Mock

import numpy as np
import pytest
import torch

from bonelift.config import ModelConfig
from bonelift.data import SyntheticSpec, generate_synthetic
from bonelift.topology import SkeletonTopology

ROOT = Path(__file__).parent.parent
MICRO_TOPOLOGY = ROOT / "configs" / "micro_topology.toml"


@pytest.fixture
def h36m():
    """The shipped 17-joint skeleton."""
    return SkeletonTopology.default()


@pytest.fixture
def micro_topo():
    """5-joint two-limb skeleton."""
    return SkeletonTopology.from_toml(MICRO_TOPOLOGY)


@pytest.fixture
def micro_cfg():
    """f=8, j=5, D=16, L=2, N=4 with dropout off."""
    return ModelConfig(
        variant="custom",
        depth=2,
        dim=16,
        bone_dim=16,
        bone_depth=2,
        frames=8,
        num_joints=5,
        state_dim=4,
        dropout=0.0,
    )


@pytest.fixture
def micro_dataset(micro_topo):
    """16 sequences of 16 frames on the micro skeleton."""
    spec = SyntheticSpec(num_sequences=16, frames=16, seed=3)
    return generate_synthetic(spec, micro_topo)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    """Run a test with float64 as the default torch dtype."""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)


@pytest.fixture
def mock_mcp():
    """Create a mock FastMCP instance."""
    mcp = Mock()
    registered_funcs = {}

    def tool_decorator():
        def wrapper(func):
            registered_funcs[func.__name__] = func
            return func

        return wrapper

    mcp.tool = tool_decorator
    mcp._registered_funcs = registered_funcs
    return mcp
