# SPDX-License-Identifier: MIT
# SPDX-FileCopyrightText: 2026 sparse-verify contributors
"""Draft trees: expansion, flattening into a verifier batch and greedy verification."""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections import deque
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from functools import cached_property
import json
from typing import Any, Final

import numpy as np
from numpy.typing import NDArray
from typing_extensions import override

from .const import LOGGER
from .exceptions import ConfigurationError

__all__ = [
    "ROOT_ID",
    "DraftModel",
    "DraftNode",
    "DraftTree",
    "FlatBatch",
    "Traversal",
    "VerifyOutcome",
    "build_tree_mask",
    "expand_draft_tree",
    "flatten_tree",
    "greedy_verify",
]

ROOT_ID: Final = 0
ROOT_PARENT: Final = -1


class Traversal(StrEnum):
    BFS = "bfs"  # level order, siblings adjacent
    DFS = "dfs"  # preorder, parent and child adjacent

    @override
    @classmethod
    def _missing_(cls, value: object) -> Traversal | None:
        if isinstance(value, str):
            for member in cls:
                if member.value == value.lower():
                    return member
        return None


@dataclass(frozen=True, slots=True)
class DraftNode:
    node_id: int
    parent: int
    token: int
    depth: int
    score: float = 0.0
    """Draft log-probability of the token given its parent."""
    cum_score: float = 0.0
    """Sum of scores along the path from the root."""


class DraftTree:
    """Candidate continuations rooted at the last committed token."""

    def __init__(self, root_token: int) -> None:
        super().__init__()
        self.nodes: dict[int, DraftNode] = {
            ROOT_ID: DraftNode(ROOT_ID, ROOT_PARENT, root_token, 0)
        }
        self._children: dict[int, list[int]] = {ROOT_ID: []}
        self._next_id = ROOT_ID + 1

    @property
    def root(self) -> DraftNode:
        return self.nodes[ROOT_ID]

    @property
    def gamma(self) -> int:
        """Number of draft nodes, root excluded."""
        return len(self.nodes) - 1

    @property
    def max_depth(self) -> int:
        return max(node.depth for node in self.nodes.values())

    def add(self, parent: int, token: int, score: float, node_id: int | None = None) -> DraftNode:
        up = self.nodes[parent]
        if any(self.nodes[c].token == token for c in self._children[parent]):
            raise ConfigurationError(f"node {parent} already has a child with token {token}")
        node_id = self._next_id if node_id is None else node_id
        if node_id in self.nodes:
            raise ConfigurationError(f"duplicate node id {node_id}")
        node = DraftNode(node_id, parent, token, up.depth + 1, score, up.cum_score + score)
        self.nodes[node_id] = node
        self._children[node_id] = []
        self._children[parent].append(node_id)
        self._next_id = max(self._next_id, node_id + 1)
        return node

    def remove(self, node_id: int) -> None:
        """Remove a node and its subtree."""
        assert node_id != ROOT_ID
        for child in list(self._children[node_id]):
            self.remove(child)
        parent = self.nodes.pop(node_id).parent
        del self._children[node_id]
        self._children[parent].remove(node_id)

    def children(self, node_id: int) -> list[DraftNode]:
        """Children in sibling order: higher score first, then lower node id."""
        kids = [self.nodes[c] for c in self._children[node_id]]
        return sorted(kids, key=lambda n: (-n.score, n.node_id))

    def level(self, depth: int) -> list[DraftNode]:
        return sorted(
            (n for n in self.nodes.values() if n.depth == depth), key=lambda n: n.node_id
        )

    def path(self, node_id: int) -> list[DraftNode]:
        """Nodes from the first draft level down to `node_id` (root excluded)."""
        chain: list[DraftNode] = []
        while node_id != ROOT_ID:
            node = self.nodes[node_id]
            chain.append(node)
            node_id = node.parent
        return chain[::-1]

    def to_json(self) -> str:
        return json.dumps(
            {
                "root_token": self.root.token,
                "nodes": [
                    {
                        "id": n.node_id,
                        "parent": n.parent,
                        "token": n.token,
                        "depth": n.depth,
                        "score": n.score,
                    }
                    for n in sorted(self.nodes.values(), key=lambda n: (n.depth, n.node_id))
                    if n.node_id != ROOT_ID
                ],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> DraftTree:
        data: dict[str, Any] = json.loads(text)  # pyright:ignore[reportAny]
        tree = cls(int(data["root_token"]))  # pyright:ignore[reportAny]
        for item in sorted(data["nodes"], key=lambda n: (n["depth"], n["id"])):  # pyright:ignore[reportAny]
            node = tree.add(
                int(item["parent"]), int(item["token"]), float(item["score"]), int(item["id"])  # pyright:ignore[reportAny]
            )
            if node.depth != int(item["depth"]):  # pyright:ignore[reportAny]
                raise ConfigurationError(f"node {node.node_id} has inconsistent depth")
        return tree


class DraftModel(ABC):
    """Proposes next-token log-probabilities for draft-tree nodes."""

    @abstractmethod
    def root_pass(self, root_token: int) -> NDArray[np.float64]:
        """Process the pending root token; return log-probabilities of its successor."""

    @abstractmethod
    def forward_nodes(self, tree: DraftTree, node_ids: Sequence[int]) -> dict[int, NDArray[np.float64]]:
        """Process draft nodes whose ancestors were already processed."""

    @abstractmethod
    def commit(self, tree: DraftTree, accepted: Sequence[int]) -> None:
        """Keep the rows of the accepted nodes; the rest of the tree is discarded."""


@dataclass(frozen=True, slots=True)
class FlatBatch:
    """Draft nodes in verifier order with their tree mask."""

    node_ids: tuple[int, ...]
    parents: tuple[int, ...]
    tokens: tuple[int, ...]
    depths: tuple[int, ...]
    positions: tuple[int, ...]
    scores: tuple[float, ...]
    traversal: Traversal
    mask: NDArray[np.bool_] = field(repr=False)

    @property
    def gamma(self) -> int:
        return len(self.node_ids)

    @cached_property
    def index_of(self) -> dict[int, int]:
        return {node_id: i for i, node_id in enumerate(self.node_ids)}

    def ancestors(self, i: int) -> list[int]:
        """Batch indices of the ancestors of entry `i`, shallowest first."""
        chain: list[int] = []
        parent = self.parents[i]
        while parent != ROOT_ID:
            j = self.index_of[parent]
            chain.append(j)
            parent = self.parents[j]
        return chain[::-1]


@dataclass(frozen=True, slots=True)
class VerifyOutcome:
    node_ids: list[int]
    tokens: list[int]
    bonus: int

    @property
    def accepted_count(self) -> int:
        """Tokens emitted by the step, bonus included."""
        return len(self.tokens) + 1


def expand_draft_tree(
    draft: DraftModel,
    root_token: int,
    depth: int,
    width: int,
    budget: int | None = None,
) -> DraftTree:
    """Grow a tree level by level from the draft model's top-`width` tokens.

    With a node budget, only the best `budget` nodes by cumulative score are kept
    (shallower first, then lower id on ties); the kept set is ancestor-closed.
    """
    if depth < 1 or width < 1:
        raise ConfigurationError(f"tree depth and width must be >= 1, got D={depth} k={width}")
    if budget is not None and budget < 1:
        raise ConfigurationError(f"node budget must be >= 1, got {budget}")
    tree = DraftTree(root_token)
    logprobs = {ROOT_ID: draft.root_pass(root_token)}
    frontier = [tree.root]
    for level in range(1, depth + 1):
        fresh: list[DraftNode] = []
        for parent in frontier:
            for token, score in _top_k(logprobs[parent.node_id], width):
                fresh.append(tree.add(parent.node_id, token, score))
        if budget is not None and tree.gamma > budget:
            _prune(tree, budget)
        frontier = [n for n in fresh if n.node_id in tree.nodes]
        if not frontier:
            break
        logprobs.update(draft.forward_nodes(tree, [n.node_id for n in frontier]))
        LOGGER.debug(f"[draft] level {level}: {len(frontier)} nodes, gamma={tree.gamma}")
    return tree


def flatten_tree(tree: DraftTree, traversal: Traversal, committed_len: int) -> FlatBatch:
    """Order the draft nodes for verification; `committed_len` includes the root."""
    order: list[DraftNode] = []
    if traversal is Traversal.BFS:
        queue = deque(tree.children(ROOT_ID))
        while queue:
            node = queue.popleft()
            order.append(node)
            queue.extend(tree.children(node.node_id))
    else:
        stack = list(reversed(tree.children(ROOT_ID)))
        while stack:
            node = stack.pop()
            order.append(node)
            stack.extend(reversed(tree.children(node.node_id)))
    node_ids = tuple(n.node_id for n in order)
    parents = tuple(n.parent for n in order)
    return FlatBatch(
        node_ids=node_ids,
        parents=parents,
        tokens=tuple(n.token for n in order),
        depths=tuple(n.depth for n in order),
        positions=tuple(committed_len - 1 + n.depth for n in order),
        scores=tuple(n.score for n in order),
        traversal=traversal,
        mask=_ancestor_mask(node_ids, parents),
    )


def build_tree_mask(batch: FlatBatch) -> NDArray[np.bool_]:
    """Row i admits column j iff node j is an ancestor of node i or i itself."""
    return _ancestor_mask(batch.node_ids, batch.parents)


def greedy_verify(
    batch: FlatBatch, target_argmax: Mapping[int, int], tree: DraftTree
) -> VerifyOutcome:
    """Walk from the root accepting the child that matches the target's argmax."""
    accepted_ids: list[int] = []
    accepted_tokens: list[int] = []
    current = ROOT_ID
    while True:
        wanted = target_argmax[current]
        match = next((c for c in tree.children(current) if c.token == wanted), None)
        if match is None or match.node_id not in batch.index_of:
            break
        accepted_ids.append(match.node_id)
        accepted_tokens.append(match.token)
        current = match.node_id
    return VerifyOutcome(accepted_ids, accepted_tokens, target_argmax[current])


def _top_k(logprobs: NDArray[np.float64], k: int) -> list[tuple[int, float]]:
    """Highest log-probabilities; equal values go to the lower token id."""
    order = np.argsort(-logprobs, kind="stable")[:k]
    return [(int(t), float(logprobs[t])) for t in order]


def _prune(tree: DraftTree, budget: int) -> None:
    ranked = sorted(
        (n for n in tree.nodes.values() if n.node_id != ROOT_ID),
        key=lambda n: (-n.cum_score, n.depth, n.node_id),
    )
    for node in ranked[budget:]:
        if node.node_id in tree.nodes:
            tree.remove(node.node_id)


def _ancestor_mask(node_ids: Sequence[int], parents: Sequence[int]) -> NDArray[np.bool_]:
    index = {node_id: i for i, node_id in enumerate(node_ids)}
    mask = np.zeros((len(node_ids), len(node_ids)), dtype=np.bool_)
    for i in range(len(node_ids)):
        mask[i, i] = True
        parent = parents[i]
        while parent != ROOT_ID:
            j = index[parent]
            mask[i, j] = True
            parent = parents[j]
    return mask
