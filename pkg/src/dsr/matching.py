"""Permutation matching between predicted and ground-truth instance channels.

The background channel (index ``k - 1``) is never permuted. Object channels
are matched by exhaustive enumeration of the ``(k - 1)!`` permutations, which
is cheap for the small ``k`` used here and gives a deterministic
lexicographic tie-break.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ChannelMismatch, KTooLarge
from .voxel import InstanceMaskVolume, check_same_grid, check_same_k

EPS = 1e-8
MAX_K = 6


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 5.0


@dataclass(frozen=True)
class ChannelPermutation:
    """Maps ground-truth channel ``i`` to prediction channel ``mapping[i]``."""

    mapping: tuple[int, ...]

    def __post_init__(self):
        m = tuple(int(v) for v in self.mapping)
        if sorted(m) != list(range(len(m))):
            raise ValueError(f"{m} is not a permutation")
        if m[-1] != len(m) - 1:
            raise ValueError("the background channel must map to itself")
        object.__setattr__(self, "mapping", m)

    @classmethod
    def identity(cls, k: int) -> "ChannelPermutation":
        return cls(tuple(range(k)))

    @classmethod
    def from_objects(cls, objects) -> "ChannelPermutation":
        objects = tuple(objects)
        return cls(objects + (len(objects),))

    @property
    def k(self) -> int:
        return len(self.mapping)

    def __getitem__(self, i) -> int:
        return self.mapping[i]

    def inverse(self) -> "ChannelPermutation":
        inv = [0] * self.k
        for i, j in enumerate(self.mapping):
            inv[j] = i
        return ChannelPermutation(tuple(inv))

    def then(self, other: "ChannelPermutation") -> "ChannelPermutation":
        """Apply ``self`` first, then ``other``: i -> other[self[i]]."""
        return ChannelPermutation(tuple(other[j] for j in self.mapping))


@functools.lru_cache(maxsize=None)
def object_permutations(k: int) -> np.ndarray:
    """All permutations of the object channels in lexicographic order, shape (n!, k-1)."""
    return np.array(list(itertools.permutations(range(k - 1))), dtype=int).reshape(-1, k - 1)


def matching_cost(W: np.ndarray, perm: ChannelPermutation) -> float:
    """Sum of W[i, p(i)] over all channels, accumulated in channel order."""
    total = 0.0
    for i, j in enumerate(perm.mapping):
        total += float(W[i, j])
    return total


def _all_costs(W: np.ndarray) -> np.ndarray:
    k = W.shape[0]
    perms = object_permutations(k)
    rows = np.arange(k - 1)
    costs = np.zeros(len(perms))
    # Accumulate column by column to mirror matching_cost's summation order.
    for i in rows:
        costs = costs + W[i, perms[:, i]]
    return costs + W[k - 1, k - 1]


def optimal_matching(W) -> ChannelPermutation:
    """Permutation minimising sum_i W[i, p(i)]; ties go to the lexicographically smallest."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ChannelMismatch(f"cost matrix must be square, got {W.shape}")
    k = W.shape[0]
    if k > MAX_K:
        raise KTooLarge(f"k={k} exceeds the enumeration bound {MAX_K}")
    costs = _all_costs(W)
    best = int(np.argmin(costs))
    return ChannelPermutation.from_objects(object_permutations(k)[best])


def optimal_assignment(score, maximize: bool = False) -> ChannelPermutation:
    """Like optimal_matching but on an object-only (k-1)x(k-1) matrix."""
    score = np.asarray(score, dtype=float)
    n = score.shape[0]
    W = np.zeros((n + 1, n + 1))
    W[:n, :n] = -score if maximize else score
    return optimal_matching(W)


def pairwise_nll(gt: InstanceMaskVolume, pred: InstanceMaskVolume) -> np.ndarray:
    """k x k matrix W[i, j] = -sum_v gt_i(v) log(pred_j(v) + eps)."""
    check_same_grid(gt, pred)
    check_same_k(gt, pred)
    k = gt.k
    g = gt.probs.reshape(k, -1)
    logp = np.log(pred.probs.reshape(k, -1) + EPS)
    return -(g @ logp.T)


def mask_loss(pred: InstanceMaskVolume, gt: InstanceMaskVolume, perm: ChannelPermutation) -> float:
    """Cross entropy averaged over voxels, with gt channel i scored against pred channel p(i)."""
    check_same_grid(gt, pred)
    check_same_k(gt, pred)
    if perm.k != gt.k:
        raise ChannelMismatch(f"permutation over {perm.k} channels for k={gt.k}")
    n = gt.spec.n_voxels
    total = np.zeros(gt.spec.dims)
    for i in range(gt.k):
        total -= gt.probs[i] * np.log(pred.probs[perm[i]] + EPS)
    return float(total.sum() / n)


def total_loss(l_motion: float, l_mask: float, cfg: LossConfig = LossConfig()) -> float:
    return l_motion + cfg.alpha * l_mask


def sequence_matching(steps) -> list[ChannelPermutation]:
    """Channel orders for a sequence of (gt, pred) mask pairs.

    Step 0 uses its own optimal matching. From then on the ground truth is
    relabelled with the previous step's order before matching, so when
    several permutations tie the previous order is kept.
    """
    steps = list(steps)
    if not steps:
        raise ValueError("sequence_matching needs at least one step")
    orders = []
    prev = None
    for gt, pred in steps:
        W = pairwise_nll(gt, pred)
        if prev is None:
            order = optimal_matching(W)
        else:
            # Row a of the relabelled cost matrix is the gt channel that prev sent to a.
            inv = prev.inverse()
            relabelled = W[list(inv.mapping)]
            order = prev.then(optimal_matching(relabelled))
        orders.append(order)
        prev = order
    return orders
