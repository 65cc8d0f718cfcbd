"""Linear-region analysis of trained ReLU networks.

Every input fixes which hidden units are active; on the set of inputs sharing
that activation pattern the network is one affine map. Regions here are
identified purely by pattern equality; no polytope geometry is built, and
every region count is a lower bound obtained from probes.
"""

import csv
import hashlib
from dataclasses import dataclass, field
from typing import List

import numpy as np

from chanlab.relu_net import forward


@dataclass(frozen=True)
class ActivationPattern:
    bits: tuple

    @classmethod
    def from_array(cls, arr):
        return cls(tuple(int(b) for b in np.asarray(arr, dtype=bool)))

    def __len__(self):
        return len(self.bits)

    def as_array(self):
        return np.array(self.bits, dtype=bool)

    @property
    def key(self):
        return pattern_key(self.as_array())

    @property
    def hash(self):
        return pattern_hash(self.key)


@dataclass
class RegionAffine:
    pattern: ActivationPattern
    weight: np.ndarray
    bias: np.ndarray

    def __call__(self, x):
        return np.asarray(x, dtype=np.float64) @ self.weight.T + self.bias


def pattern_key(bits):
    """Compact hashable key for one boolean pattern row."""
    bits = np.asarray(bits, dtype=bool)
    return np.packbits(bits).tobytes() + len(bits).to_bytes(4, "little")


def pattern_hash(key):
    return hashlib.sha1(key).hexdigest()[:16]


def activation_patterns(params, X):
    """Boolean matrix (m, n_hidden_units): unit active iff pre-activation > 0."""
    a = np.atleast_2d(np.asarray(X, dtype=np.float64))
    cols = []
    for W, b in params.layers[:-1]:
        z = a @ W.T + b
        on = z > 0.0
        cols.append(on)
        a = np.where(on, z, 0.0)
    if not cols:
        return np.zeros((a.shape[0], 0), dtype=bool)
    return np.hstack(cols)


def activation_pattern(params, x):
    return ActivationPattern.from_array(activation_patterns(params, x)[0])


def region_affine(params, pattern):
    """Affine map ``(W, b)`` the network applies on the region of ``pattern``.

    Each active mask multiplies the running weight/bias from the left, so
    ``W = W_l L_l W_{l-1} ... L_1 W_0`` with ``L_i`` the 0/1 diagonal masks.
    """
    bits = pattern.as_array() if isinstance(pattern, ActivationPattern) else np.asarray(pattern, dtype=bool)
    if bits.size != params.n_hidden_units:
        raise ValueError(f"pattern has {bits.size} bits, network has {params.n_hidden_units} hidden units")
    W_acc, b_acc = params.layers[0]
    W_acc, b_acc = W_acc.copy(), b_acc.copy()
    offset = 0
    for W, b in params.layers[1:]:
        width = W.shape[1]
        mask = bits[offset:offset + width].astype(np.float64)
        offset += width
        W_acc = W @ (mask[:, None] * W_acc)
        b_acc = W @ (mask * b_acc) + b
    if not isinstance(pattern, ActivationPattern):
        pattern = ActivationPattern.from_array(bits)
    return RegionAffine(pattern, W_acc, b_acc)


def _residual(params, region, x):
    x = np.atleast_2d(x)
    f = forward(params, x)
    diff = np.abs(f - region(x)).max()
    return float(diff / (1.0 + np.abs(f).max()))


def verify_local_linearity(params, x, tolerance, n_probes=8, step=1e-6, seed=0):
    """Check that the region map reproduces the network at and around ``x``.

    The residual is ``max|f(x) - (W x + b)| / (1 + max|f(x)|)``. Probes
    ``x + delta`` that keep the activation pattern must satisfy the same
    map. Returns ``(passed, worst_residual)``.
    """
    if not tolerance >= 0:
        raise ValueError("tolerance must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    bits = activation_patterns(params, x)[0]
    region = region_affine(params, bits)
    worst = _residual(params, region, x)
    rng = np.random.default_rng(seed)
    scale = step * (1.0 + np.abs(x).max())
    probes = x + scale * rng.standard_normal((n_probes, x.size))
    same = np.all(activation_patterns(params, probes) == bits, axis=1)
    if same.any():
        worst = max(worst, _residual(params, region, probes[same]))
    return worst <= tolerance, worst


def region_maps(params, X):
    """Per-row region map outputs ``W_k x + b_k``; one map build per distinct pattern."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    P = activation_patterns(params, X)
    out = np.empty((X.shape[0], params.widths[-1]))
    groups = {}
    for i, row in enumerate(P):
        groups.setdefault(pattern_key(row), []).append(i)
    for idx in groups.values():
        region = region_affine(params, P[idx[0]])
        out[idx] = region(X[idx])
    return out


def count_regions_sampled(params, input_sampler, n_probes):
    """Distinct activation patterns among ``n_probes`` sampled inputs (a lower bound)."""
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    X = np.atleast_2d(input_sampler(n_probes))
    P = activation_patterns(params, X)
    return len({pattern_key(row) for row in P})


def pattern_mass(params, X):
    """Sorted probe fractions per distinct pattern, largest first."""
    P = activation_patterns(params, X)
    counts = {}
    for row in P:
        k = pattern_key(row)
        counts[k] = counts.get(k, 0) + 1
    return np.sort(np.array(list(counts.values()), dtype=np.float64))[::-1] / len(P)


@dataclass
class RegionStats:
    pattern_hash: str
    train_count: int
    probe_count: int
    region_mse: float


@dataclass
class OccupancyReport:
    regions: List[RegionStats] = field(default_factory=list)
    n_train: int = 0
    n_probe: int = 0
    empty_region_fraction: float = 0.0
    train_loss: float = 0.0

    @property
    def n_regions(self):
        return len(self.regions)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pattern_hash", "train_count", "probe_count", "region_mse"])
            for r in self.regions:
                w.writerow([r.pattern_hash, r.train_count, r.probe_count, f"{r.region_mse:.12g}"])


def region_occupancy(params, train_set, probe_set):
    """Partition training and probe inputs by activation pattern.

    ``region_mse`` is the mean training loss inside a region (NaN when the
    region holds no training sample); ``empty_region_fraction`` is the share
    of probe inputs whose region holds no training sample.
    """
    if len(train_set) == 0 or len(probe_set) == 0:
        raise ValueError("train and probe sets must be nonempty")
    err = forward(params, train_set.x) - train_set.h
    sq = np.sum(err * err, axis=1)
    stats = {}
    for row, loss in zip(activation_patterns(params, train_set.x), sq):
        entry = stats.setdefault(pattern_key(row), [0, 0, 0.0])
        entry[0] += 1
        entry[2] += loss
    empty = 0
    for row in activation_patterns(params, probe_set.x):
        k = pattern_key(row)
        entry = stats.setdefault(k, [0, 0, 0.0])
        entry[1] += 1
        if entry[0] == 0:
            empty += 1
    regions = [
        RegionStats(pattern_hash(k), n_tr, n_pr, (loss / n_tr) if n_tr else float("nan"))
        for k, (n_tr, n_pr, loss) in stats.items()
    ]
    regions.sort(key=lambda r: (-r.train_count, -r.probe_count, r.pattern_hash))
    return OccupancyReport(
        regions=regions,
        n_train=len(train_set),
        n_probe=len(probe_set),
        empty_region_fraction=empty / len(probe_set),
        train_loss=float(sq.mean()),
    )
