"""The multi-phase training curriculum.

Phases: (1) per-branch softmax classification, (2) contrastive alignment
plus softmax with the unshared layers frozen (half-share nets only),
(3) triplet loss alone with the classifier detached, (4) triplet loss at
instance granularity, where an epoch is a pass over the training photos.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import NonFiniteGradientError, SGD, softmax_xent
from .checkpoint import save_checkpoint
from .data.sampling import (batch_chw, ImageStore, sample_triplet_ids,
                            sample_triplets)
from .index import EmbeddingIndex
from .losses import (contrastive, TripletBatchFeatures, triplet_modified,
                     triplet_standard)
from .metrics import mean_ap, ranked_result_from_query

logger = logging.getLogger(__name__)

TRIPLET_LOSSES = ("triplet_standard", "triplet_modified")
QUERY_SCALE = 2.0


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient goes non-finite mid-phase."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class _NonFiniteForward(Exception):
    """Internal: a tower produced non-finite embeddings."""


@dataclass
class PhaseConfig:
    """One curriculum phase. Defaults follow the desk-scale budget:
    batch 16, lr 0.01 for phase 1 and 0.001 afterwards."""

    phase: int
    loss: str = None
    epochs: int = 1
    batch_size: int = 16
    steps_per_epoch: int = None
    lr: float = None
    momentum: float = 0.9
    weight_decay: float = 0.0
    margin: float = 1.0
    softmax_weight: float = 1.0
    contrastive_weight: float = 1.0
    contrastive_margin: float = 1.0
    granularity: str = None
    frozen_layers: tuple = ()
    augment: bool = True
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.phase not in (1, 2, 3, 4):
            raise ValueError(f"phase must be 1-4, got {self.phase}")
        if self.phase in (1, 2):
            if self.loss is not None:
                raise ValueError(
                    f"phase {self.phase} has a fixed loss; remove "
                    f"loss={self.loss!r}")
        else:
            if self.loss is None:
                self.loss = "triplet_modified"
            if self.loss not in TRIPLET_LOSSES:
                raise ValueError(f"phase {self.phase} loss must be one of "
                                 f"{TRIPLET_LOSSES}, got {self.loss!r}")
        wanted = "instance" if self.phase == 4 else "category"
        if self.granularity is None:
            self.granularity = wanted
        if self.granularity != wanted:
            raise ValueError(f"phase {self.phase} samples at {wanted} "
                             f"granularity, got {self.granularity!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size, and patience must be "
                             "positive")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be positive")
        if self.lr is not None and self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")

    @property
    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return 0.01 if self.phase == 1 else 0.001


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    best_map: float = None
    best_checkpoint: Path = None
    last_checkpoint: Path = None
    history: list = field(default_factory=list)
    net: object = None


HISTORY_FIELDS = ("step", "phase", "loss_total", "loss_softmax",
                  "loss_contrastive", "loss_triplet", "grad_norm_anchor",
                  "grad_norm_photo", "val_map")


def write_training_csv(history, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            out = {}
            for key in HISTORY_FIELDS:
                value = row.get(key)
                out[key] = "" if value is None else (
                    repr(value) if isinstance(value, float) else value)
            writer.writerow(out)


def default_store(net, manifest, **overrides) -> ImageStore:
    """An ImageStore matching the net's pairing and input geometry."""
    domain = "edgemap" if net.pairing == "sketch_edgemap" else "photo"
    kwargs = dict(sketch_size=net.anchor.input_size,
                  photo_size=net.photo.input_size, photo_domain=domain)
    kwargs.update(overrides)
    return ImageStore(manifest, **kwargs)


def _branch_grad_norm(branch) -> float:
    total = 0.0
    for p in branch.parameters():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return math.sqrt(total)


def _embed_items(branch, store, items, kind, batch: int = 32) -> np.ndarray:
    """Deterministic eval-path embeddings, [len(items), D]."""
    fetch = store.anchor_raster if kind == "sketch" else store.photo_raster
    chunks = []
    for start in range(0, len(items), batch):
        group = items[start:start + batch]
        x = batch_chw([fetch(it, train=False) for it in group])
        chunks.append(branch.embed(x, training=False).data)
    return np.concatenate(chunks, axis=0)


def build_photo_index(net, manifest, store) -> EmbeddingIndex:
    """Embed the training photos into a snapshotted index."""
    photos = manifest.photos("train")
    if not photos:
        raise ValueError("manifest has no training photos to index")
    embs = _embed_items(net.photo, store, photos, "photo")
    index = EmbeddingIndex(net.photo.embed_dim)
    for item, e in zip(photos, embs):
        index.add(item.id, e, item.category)
    return index.snapshot()


def validate(net, manifest, store=None, scale: float = QUERY_SCALE) -> float:
    """Category-level retrieval mAP: validation sketches against the
    training photos. Deterministic (no augmentation on this path)."""
    store = store or default_store(net, manifest)
    val_sketches = manifest.sketches("validation")
    if not val_sketches:
        raise ValueError("manifest has no validation sketches")
    index = build_photo_index(net, manifest, store)
    embs = _embed_items(net.anchor, store, val_sketches, "sketch")
    results = []
    for item, e in zip(val_sketches, embs):
        results.append(ranked_result_from_query(index, item.id, e,
                                                item.category, scale))
    return mean_ap(results)


def _materialize_batch(store, items, seeds, kind, train):
    fetch = store.anchor_raster if kind == "sketch" else store.photo_raster
    return batch_chw([fetch(it, seed=int(s), train=train)
                      for it, s in zip(items, seeds)])


def _classification_step(net, store, cfg, rng, pools, label_of):
    sketches, photos = pools
    row = {"loss_softmax": 0.0}
    norms = {}
    for branch, pool, kind, tag in ((net.anchor, sketches, "sketch",
                                     "anchor"),
                                    (net.photo, photos, "photo", "photo")):
        picks = [pool[int(i)] for i in
                 rng.integers(len(pool), size=cfg.batch_size)]
        seeds = rng.integers(2 ** 32, size=cfg.batch_size)
        x = _materialize_batch(store, picks, seeds, kind, cfg.augment)
        labels = np.array([label_of[it.category] for it in picks])
        loss = softmax_xent(branch.classify(x, training=True), labels)
        loss.backward()
        row["loss_softmax"] += float(loss.data)
        norms[tag] = _branch_grad_norm(branch)
    row["loss_total"] = row["loss_softmax"]
    row["grad_norm_anchor"] = norms["anchor"]
    row["grad_norm_photo"] = norms["photo"]
    return row


def _embedding_step(net, store, cfg, rng, manifest, label_of):
    """Phases 2-4: one triplet batch through the three towers."""
    samples = sample_triplets(manifest, cfg.batch_size, cfg.granularity,
                              seed=int(rng.integers(2 ** 63)), store=store,
                              train=cfg.augment)
    xa = batch_chw([s.anchor for s in samples])
    xp = batch_chw([s.positive for s in samples])
    xn = batch_chw([s.negative for s in samples])
    emb_a = net.anchor.embed(xa, training=True)
    emb_p = net.photo.embed(xp, training=True)
    emb_n = net.photo.embed(xn, training=True)
    for emb in (emb_a, emb_p, emb_n):
        if not np.isfinite(emb.data).all():
            raise _NonFiniteForward
    row = {}
    if cfg.phase == 2:
        ones = np.ones(cfg.batch_size)
        zeros = np.zeros(cfg.batch_size)
        loss_c = (contrastive(emb_a, emb_p, ones, cfg.contrastive_margin) +
                  contrastive(emb_a, emb_n, zeros, cfg.contrastive_margin))
        anchor_labels = np.array(
            [label_of[manifest.by_id(s.anchor_id).category]
             for s in samples])
        pos_labels = np.array(
            [label_of[manifest.by_id(s.positive_id).category]
             for s in samples])
        logits_a = net.anchor.classify(xa, training=True)
        logits_p = net.photo.classify(xp, training=True)
        loss_s = softmax_xent(logits_a, anchor_labels) + \
            softmax_xent(logits_p, pos_labels)
        total = (loss_s * cfg.softmax_weight +
                 loss_c * cfg.contrastive_weight)
        row["loss_softmax"] = float(loss_s.data)
        row["loss_contrastive"] = float(loss_c.data)
    else:
        feats = TripletBatchFeatures(emb_a, emb_p, emb_n, m=cfg.margin)
        fn = triplet_modified if cfg.loss == "triplet_modified" else \
            triplet_standard
        total = fn(feats)
        row["loss_triplet"] = float(total.data)
    row["loss_total"] = float(total.data)
    total.backward()
    row["grad_norm_anchor"] = _branch_grad_norm(net.anchor)
    row["grad_norm_photo"] = _branch_grad_norm(net.photo)
    return row


def run_phase(net, manifest, cfg: PhaseConfig, store=None, out_dir=None,
              state: TrainState = None) -> TrainState:
    """Execute one phase; updates and returns the train state.

    Checkpoints (last per epoch, best by validation mAP) are written under
    ``out_dir`` when given. Divergence aborts with the last good
    checkpoint untouched on disk.
    """
    state = state or TrainState()
    state.net = net
    store = store or default_store(net, manifest)
    out_dir = Path(out_dir) if out_dir is not None else None
    rng = np.random.default_rng(cfg.seed)
    categories = manifest.categories
    label_of = {cat: i for i, cat in enumerate(categories)}
    sketches = manifest.sketches("train")
    photos = manifest.photos("train")
    if not sketches or not photos:
        raise ValueError("manifest needs training sketches and photos")

    if cfg.phase in (1, 2):
        if net.anchor.classifier is None:
            if cfg.phase == 2:
                raise ValueError("phase 2 requires the classifier head "
                                 "trained in phase 1")
            net.attach_classifiers(len(categories))
        elif net.anchor.classifier.weight.data.shape[0] != len(categories):
            raise ValueError(
                f"classifier head has "
                f"{net.anchor.classifier.weight.data.shape[0]} classes but "
                f"the manifest has {len(categories)} categories")
        if cfg.phase == 2:
            if net.scheme.mode != "half_share":
                raise ValueError("phase 2 applies to half_share networks "
                                 "only")
            unshared = [name for name, own in net.ownership().items()
                        if own == "per_branch"]
            for branch in (net.anchor, net.photo):
                branch.set_layer_trainable(unshared, False)
    else:
        net.detach_classifiers()
        net.unfreeze()
    if cfg.frozen_layers:
        for branch in (net.anchor, net.photo):
            branch.set_layer_trainable(cfg.frozen_layers, False)

    opt = SGD(net.parameters(), lr=cfg.resolved_lr, momentum=cfg.momentum,
              weight_decay=cfg.weight_decay)
    pace_pool = photos if cfg.phase == 4 else sketches
    steps = cfg.steps_per_epoch or max(
        1, math.ceil(len(pace_pool) / cfg.batch_size))
    has_validation = bool(manifest.sketches("validation"))
    if state.best_map is None:
        state.best_map = -math.inf
    stale_epochs = 0

    for _ in range(cfg.epochs):
        for _ in range(steps):
            try:
                if cfg.phase == 1:
                    row = _classification_step(net, store, cfg, rng,
                                               (sketches, photos), label_of)
                else:
                    row = _embedding_step(net, store, cfg, rng, manifest,
                                          label_of)
            except _NonFiniteForward:
                raise TrainingDiverged(
                    f"non-finite embeddings at step {state.step + 1} "
                    f"(phase {cfg.phase}); last good checkpoint: "
                    f"{state.last_checkpoint}", state=state) from None
            state.step += 1
            row["step"] = state.step
            row["phase"] = cfg.phase
            if not np.isfinite(row["loss_total"]):
                state.history.append(row)
                raise TrainingDiverged(
                    f"non-finite loss at step {state.step} (phase "
                    f"{cfg.phase}); last good checkpoint: "
                    f"{state.last_checkpoint}", state=state)
            try:
                opt.step()
            except NonFiniteGradientError as exc:
                state.history.append(row)
                raise TrainingDiverged(
                    f"non-finite gradient at step {state.step} (phase "
                    f"{cfg.phase}): {exc}; last good checkpoint: "
                    f"{state.last_checkpoint}", state=state) from exc
            opt.zero_grad()
            state.history.append(row)
        state.epoch += 1

        try:
            val = validate(net, manifest, store) if has_validation else None
        except ValueError as exc:
            raise TrainingDiverged(
                f"validation failed after epoch {state.epoch} (phase "
                f"{cfg.phase}): {exc}; last good checkpoint: "
                f"{state.last_checkpoint}", state=state) from exc
        state.history[-1]["val_map"] = val
        if out_dir is not None:
            last = out_dir / "last.sbf"
            save_checkpoint(last, net.state_dict())
            state.last_checkpoint = last
        if val is not None:
            if val > state.best_map:
                state.best_map = val
                stale_epochs = 0
                if out_dir is not None:
                    best = out_dir / "best.sbf"
                    save_checkpoint(best, net.state_dict())
                    state.best_checkpoint = best
            else:
                stale_epochs += 1
                if stale_epochs >= cfg.patience:
                    logger.info("phase %d: no validation improvement for "
                                "%d epochs, stopping early", cfg.phase,
                                stale_epochs)
                    break
    return state


RECIPE_TABLE = """\
scheme      | allowed phases      | notes
full_share  | 3 (optional 4)      | single triplet phase; standard loss is fine
half_share  | 1,2,3 (optional 4)  | multi-phase; triplet_modified recommended
no_share    | 1,3 (optional 4)    | two-step; phase 2 not applicable"""


def validate_recipe(mode: str, pairing: str, cfgs) -> None:
    phases = [c.phase for c in cfgs]

    def reject(why):
        raise ValueError(f"phase sequence {phases} is not a valid recipe "
                         f"for {mode}/{pairing}: {why}\n{RECIPE_TABLE}")

    if not phases:
        reject("at least one phase is required")
    if any(b <= a for a, b in zip(phases, phases[1:])):
        reject("phases must be strictly increasing")
    if 2 in phases and mode != "half_share":
        reject("phase 2 (contrastive alignment over frozen unshared "
               "layers) applies to half_share only")
    if 2 in phases and 1 not in phases:
        reject("phase 2 builds on the classifiers trained in phase 1")
    if mode == "full_share" and (1 in phases or 2 in phases):
        reject("a fully shared net trains in a single triplet phase")
    if mode == "half_share":
        for cfg in cfgs:
            if cfg.phase in (3, 4) and cfg.loss == "triplet_standard":
                logger.warning(
                    "half_share with triplet_standard risks a vanishing "
                    "gradient at the near-degenerate start; "
                    "triplet_modified is recommended")


def run_curriculum(scheme, pairing: str, manifest, cfgs, preset: str = "mini",
                   seed: int = 0, out_dir=None, store=None,
                   net=None) -> TrainState:
    """Validate the phase recipe, then run the phases in order.

    A net is built from (scheme, pairing, preset, seed) unless one is
    passed in. The returned state carries the trained net and the
    checkpoint paths.
    """
    from .models import build_triplet

    if net is None:
        net = build_triplet(scheme, pairing, preset=preset, seed=seed)
    validate_recipe(net.scheme.mode, pairing, cfgs)
    store = store or default_store(net, manifest)
    state = TrainState()
    for cfg in cfgs:
        state = run_phase(net, manifest, cfg, store=store, out_dir=out_dir,
                          state=state)
    state.net = net
    return state
