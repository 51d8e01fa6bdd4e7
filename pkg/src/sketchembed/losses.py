"""Training losses and the saddle diagnostics.

The two triplet variants differ only in whether the anchor is scaled by 2
inside the distance terms. That scaling is what breaks the degenerate
saddle: with a = p = n = v the standard hinge argument is exactly m and
every gradient is exactly zero (the differences a-p and a-n are bitwise
zero), while the scaled form leaves 2v-p = v in both terms, so the
gradients on p and n are -v and +v even though the loss value is the same
m/2. The anchor gradient cancels in both variants at that point.

``softmax_xent`` lives in :mod:`sketchembed.autograd` next to the other
graph primitives; it is re-exported here so the four curriculum losses can
be imported from one place.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import Tensor, relu, scale, softmax_xent, sqrt, tensor_sum

__all__ = [
    "TripletBatchFeatures",
    "SaddleReport",
    "contrastive",
    "triplet_standard",
    "triplet_modified",
    "softmax_xent",
    "saddle_probe",
    "saddle_trajectory",
    "write_saddle_csv",
    "degenerate_batch",
]


@dataclass
class TripletBatchFeatures:
    """Anchor/positive/negative embeddings plus the margin."""

    a: Tensor
    p: Tensor
    n: Tensor
    m: float = 1.0

    def __post_init__(self):
        if not isinstance(self.a, Tensor):
            self.a = Tensor(np.asarray(self.a, dtype=np.float32))
        if not isinstance(self.p, Tensor):
            self.p = Tensor(np.asarray(self.p, dtype=np.float32))
        if not isinstance(self.n, Tensor):
            self.n = Tensor(np.asarray(self.n, dtype=np.float32))
        shapes = {self.a.shape, self.p.shape, self.n.shape}
        if len(shapes) != 1 or self.a.data.ndim != 2:
            raise ValueError(
                f"triplet features must be three equal [N,D] tensors, got "
                f"a{self.a.shape} p{self.p.shape} n{self.n.shape}")
        if not self.m > 0:
            raise ValueError(f"margin must be positive, got {self.m}")
        for label, t in (("a", self.a), ("p", self.p), ("n", self.n)):
            if not np.isfinite(t.data).all():
                raise ValueError(f"non-finite entries in {label}")

    @property
    def batch_size(self) -> int:
        return self.a.shape[0]


def _hinge_mean(pos_sq: Tensor, neg_sq: Tensor, m: float, n: int) -> Tensor:
    hinge = relu(pos_sq - neg_sq + m)
    return scale(tensor_sum(hinge), 1.0 / (2.0 * n))


def triplet_standard(batch: TripletBatchFeatures) -> Tensor:
    """(1/2N) sum of max(0, m + |a-p|^2 - |a-n|^2)."""
    d_pos = tensor_sum((batch.a - batch.p).square(), axis=1)
    d_neg = tensor_sum((batch.a - batch.n).square(), axis=1)
    return _hinge_mean(d_pos, d_neg, batch.m, batch.batch_size)


def triplet_modified(batch: TripletBatchFeatures) -> Tensor:
    """(1/2N) sum of max(0, m + |2a-p|^2 - |2a-n|^2).

    Hinge-inactive rows contribute zero loss and zero gradient (the hinge
    subgradient at exactly 0 is 0).
    """
    a2 = scale(batch.a, 2.0)
    d_pos = tensor_sum((a2 - batch.p).square(), axis=1)
    d_neg = tensor_sum((a2 - batch.n).square(), axis=1)
    return _hinge_mean(d_pos, d_neg, batch.m, batch.batch_size)


def contrastive(x1: Tensor, x2: Tensor, same, margin_c: float = 1.0) -> Tensor:
    """Mean of same*d^2 + (1-same)*max(0, margin_c - d)^2, d = |x1 - x2|.

    The squared-distance term is computed directly from the sum of squares
    so matched identical pairs get an exact zero gradient instead of a
    0/0 through the square root.
    """
    if not margin_c > 0:
        raise ValueError(f"contrastive margin must be positive, got {margin_c}")
    if not isinstance(x1, Tensor):
        x1 = Tensor(np.asarray(x1, dtype=np.float32))
    if not isinstance(x2, Tensor):
        x2 = Tensor(np.asarray(x2, dtype=np.float32))
    if x1.shape != x2.shape or x1.data.ndim != 2:
        raise ValueError(
            f"contrastive expects two equal [N,D] tensors, got {x1.shape} "
            f"and {x2.shape}")
    same = np.asarray(same).astype(x1.data.dtype).reshape(-1)
    if same.shape[0] != x1.shape[0]:
        raise ValueError(
            f"same-flags length {same.shape[0]} does not match batch "
            f"{x1.shape[0]}")
    sum_sq = tensor_sum((x1 - x2).square(), axis=1)
    d = sqrt(sum_sq)
    pull = Tensor(same) * sum_sq
    push = Tensor(1.0 - same) * relu((-d) + margin_c).square()
    return (pull + push).mean()


@dataclass
class SaddleReport:
    loss: float
    grad_norm_a: float
    grad_norm_p: float
    grad_norm_n: float


_LOSS_KINDS = {"standard": triplet_standard, "modified": triplet_modified}


def _fresh_leaves(batch: TripletBatchFeatures):
    a = Tensor(batch.a.data.copy(), requires_grad=True)
    p = Tensor(batch.p.data.copy(), requires_grad=True)
    n = Tensor(batch.n.data.copy(), requires_grad=True)
    return a, p, n


def saddle_probe(batch: TripletBatchFeatures, loss_kind: str) -> SaddleReport:
    """Loss value and per-input gradient norms at the given batch."""
    if loss_kind not in _LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}, expected one of "
                         f"{sorted(_LOSS_KINDS)}")
    a, p, n = _fresh_leaves(batch)
    loss = _LOSS_KINDS[loss_kind](
        TripletBatchFeatures(a, p, n, m=batch.m))
    loss.backward()

    def norm(t):
        return 0.0 if t.grad is None else float(np.linalg.norm(t.grad))

    return SaddleReport(loss=loss.item(), grad_norm_a=norm(a),
                        grad_norm_p=norm(p), grad_norm_n=norm(n))


def saddle_trajectory(batch: TripletBatchFeatures, loss_kind: str,
                      steps: int = 200, lr: float = 0.05) -> list:
    """Plain gradient descent on the three feature points themselves.

    Started from a degenerate batch this reproduces the two behaviours of
    interest: the standard loss sits at m/2 with zero gradients for the
    whole trajectory, the modified loss walks out of the saddle and down to
    zero. Rows are dicts keyed like the CSV columns.
    """
    if loss_kind not in _LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}, expected one of "
                         f"{sorted(_LOSS_KINDS)}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    fn = _LOSS_KINDS[loss_kind]
    a, p, n = _fresh_leaves(batch)
    rows = []
    for step in range(steps):
        a.grad = p.grad = n.grad = None
        loss = fn(TripletBatchFeatures(a, p, n, m=batch.m))
        loss.backward()
        grads = [np.zeros_like(t.data) if t.grad is None else t.grad
                 for t in (a, p, n)]
        rows.append({
            "step": step,
            "loss": loss.item(),
            "grad_norm_a": float(np.linalg.norm(grads[0])),
            "grad_norm_p": float(np.linalg.norm(grads[1])),
            "grad_norm_n": float(np.linalg.norm(grads[2])),
        })
        for t, g in zip((a, p, n), grads):
            t.data = t.data - lr * g
    return rows


_CSV_FIELDS = ("step", "loss", "grad_norm_a", "grad_norm_p", "grad_norm_n")


def write_saddle_csv(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float)
                             else row[k] for k in _CSV_FIELDS})


def degenerate_batch(v, m: float = 1.0) -> TripletBatchFeatures:
    """Batch with a = p = n, the configuration that stalls the standard loss."""
    v = np.asarray(v, dtype=np.float32)
    if v.ndim == 1:
        v = v[None]
    return TripletBatchFeatures(Tensor(v.copy()), Tensor(v.copy()),
                                Tensor(v.copy()), m=m)
