"""Skeleton topology: the parent map every other module hangs on."""

import hashlib
import tomllib
from functools import cached_property
from importlib import resources
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigurationError

TOPOLOGY_SCHEMA = "bonelift.topology/1"
DEFAULT_TOPOLOGY = "h36m17"


class SkeletonTopology(BaseModel):
    """A rooted joint tree described by its parent map."""

    model_config = ConfigDict(frozen=True)

    name: str = Field(default="custom", description="Human readable topology name")
    num_joints: int = Field(..., gt=0, description="Joint count j")
    root_index: int = Field(..., ge=0, description="Index of the root joint")
    parents: tuple[int, ...] = Field(..., description="Parent of each joint, -1 for the root")
    joint_names: tuple[str, ...] | None = None
    rest_offsets_mm: tuple[tuple[float, float, float], ...] | None = Field(
        default=None, description="Rest pose offset of each joint from its parent"
    )

    @model_validator(mode="after")
    def validate_tree(self) -> "SkeletonTopology":
        """Check the parent map describes a single tree rooted at root_index."""
        j = self.num_joints
        if len(self.parents) != j:
            raise ValueError(f"parents has {len(self.parents)} entries, expected {j}")
        if not 0 <= self.root_index < j:
            raise ValueError(f"root_index {self.root_index} outside [0, {j})")
        roots = [i for i, p in enumerate(self.parents) if p == -1]
        if roots != [self.root_index]:
            raise ValueError(f"expected exactly one root at {self.root_index}, found {roots}")
        for i, p in enumerate(self.parents):
            if p == i:
                raise ValueError(f"joint {i} is its own parent")
            if p != -1 and not 0 <= p < j:
                raise ValueError(f"joint {i} has invalid parent {p}")
        # Every joint must reach the root in fewer than j hops.
        for i in range(j):
            node, hops = i, 0
            while node != self.root_index:
                node = self.parents[node]
                hops += 1
                if hops >= j:
                    raise ValueError(f"parent map has a cycle through joint {i}")
        if self.joint_names is not None and len(self.joint_names) != j:
            raise ValueError("joint_names length does not match num_joints")
        if self.rest_offsets_mm is not None and len(self.rest_offsets_mm) != j:
            raise ValueError("rest_offsets_mm length does not match num_joints")
        return self

    @classmethod
    def from_toml(cls, path: str | Path) -> "SkeletonTopology":
        """Load a topology file.

        Args:
            path: Path to a TOML document with the topology schema tag.

        Returns:
            Validated topology.

        Raises:
            ConfigurationError: If the file is missing or carries the wrong schema.
        """
        try:
            with open(path, "rb") as f:
                doc = tomllib.load(f)
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ConfigurationError(f"Failed to read topology file {path}: {e}") from e
        return cls._from_document(doc, str(path))

    @classmethod
    def default(cls) -> "SkeletonTopology":
        """Return the shipped 17-joint Human3.6M skeleton."""
        text = resources.files("bonelift.resources").joinpath(f"{DEFAULT_TOPOLOGY}.toml").read_text()
        return cls._from_document(tomllib.loads(text), DEFAULT_TOPOLOGY)

    @classmethod
    def chain(cls, num_joints: int) -> "SkeletonTopology":
        """A straight chain 0-1-...-(j-1) rooted at joint 0."""
        return cls(
            name=f"chain{num_joints}",
            num_joints=num_joints,
            root_index=0,
            parents=tuple([-1] + list(range(num_joints - 1))),
        )

    @classmethod
    def _from_document(cls, doc: dict, source: str) -> "SkeletonTopology":
        schema = doc.pop("schema", None)
        if schema != TOPOLOGY_SCHEMA:
            raise ConfigurationError(
                f"Topology {source} has schema {schema!r}, expected {TOPOLOGY_SCHEMA!r}"
            )
        try:
            return cls(**doc)
        except ValidationError as e:
            raise ConfigurationError(f"Invalid topology {source}: {e}") from e

    @cached_property
    def topology_hash(self) -> str:
        """Stable digest of the tree structure (names and offsets excluded)."""
        canonical = f"{self.num_joints}|{self.root_index}|{','.join(map(str, self.parents))}"
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def bones(self) -> list[tuple[int, int]]:
        """(child, parent) pairs for every non-root joint."""
        return [(i, p) for i, p in enumerate(self.parents) if p != -1]

    def traversal_order(self) -> list[int]:
        """Joints ordered so every parent precedes its children."""
        children: dict[int, list[int]] = {i: [] for i in range(self.num_joints)}
        for child, parent in self.bones():
            children[parent].append(child)
        order, frontier = [], [self.root_index]
        while frontier:
            node = frontier.pop(0)
            order.append(node)
            frontier.extend(children[node])
        return order

    def path_to_root(self, joint: int) -> list[int]:
        """Joints from ``joint`` up to and including the root."""
        path = [joint]
        while path[-1] != self.root_index:
            path.append(self.parents[path[-1]])
        return path

    def leaves(self) -> list[int]:
        """Joints with no children."""
        has_child = {p for p in self.parents if p != -1}
        return [i for i in range(self.num_joints) if i not in has_child]
