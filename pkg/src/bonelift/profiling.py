"""Operation counting and parameter accounting for cost comparisons."""

from collections import Counter
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import torch
import torch.nn as nn
from torch.utils._python_dispatch import TorchDispatchMode
from torch.utils._pytree import tree_flatten
from torch.utils.flop_counter import FlopCounterMode

# Reference trainable parameter count of the tiny variant.
REFERENCE_TINY_PARAMS = 900_000


@dataclass
class OperationCount:
    """Work done by one forward pass."""

    ops: int = 0
    elements: int = 0
    flops: int = 0
    by_op: Counter = field(default_factory=Counter)


class _ElementCounter(TorchDispatchMode):
    def __init__(self, count: OperationCount):
        super().__init__()
        self.count = count

    def __torch_dispatch__(self, func, types, args=(), kwargs=None):
        out = func(*args, **(kwargs or {}))
        self.count.ops += 1
        self.count.by_op[str(func.overloadpacket)] += 1
        outputs, _ = tree_flatten(out)
        self.count.elements += sum(t.numel() for t in outputs if isinstance(t, torch.Tensor))
        return out


@torch.no_grad()
def count_operations(fn: Callable[..., Any], *args: Any, **kwargs: Any) -> OperationCount:
    """Run ``fn`` once and count dispatched ops, produced elements and matmul FLOPs."""
    count = OperationCount()
    flop_counter = FlopCounterMode(display=False)
    with flop_counter, _ElementCounter(count):
        fn(*args, **kwargs)
    count.flops = flop_counter.get_total_flops()
    return count


def parameter_breakdown(model: nn.Module, trainable_only: bool = False) -> dict[str, int]:
    """Parameter count per top-level child module plus a ``total`` entry."""
    breakdown: dict[str, int] = {}
    for name, child in model.named_children():
        params = [p for p in child.parameters() if p.requires_grad or not trainable_only]
        breakdown[name] = sum(p.numel() for p in params)
    direct = [p for p in model.parameters(recurse=False) if p.requires_grad or not trainable_only]
    if direct:
        breakdown["<own>"] = sum(p.numel() for p in direct)
    breakdown["total"] = sum(breakdown.values())
    return breakdown
