"""Triplet sampling over a manifest, and the store that turns manifest
rows into branch-ready rasters.

Anchors are drawn uniformly from training sketches. In category mode the
positive photo shares the anchor's category and the negative does not; in
instance mode the positive is the photo the sketch was drawn from and the
negative is a different photo of the same category.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .imaging import (RasterImage, augment_geometric, center_crop,
                      extract_edges, skeletonize)
from .manifest import DatasetManifest, ManifestItem
from .strokes import augment_stroke_removal, rasterize, sketch_from_json

GRANULARITIES = ("category", "instance")


@dataclass
class TripletSample:
    anchor: RasterImage
    positive: RasterImage
    negative: RasterImage
    granularity: str
    anchor_id: str = ""
    positive_id: str = ""
    negative_id: str = ""


def _pools(manifest: DatasetManifest):
    photos = sorted(manifest.photos(), key=lambda i: i.id)
    by_cat, by_group, others = {}, {}, {}
    for p in photos:
        by_cat.setdefault(p.category, []).append(p)
        if p.instance_group:
            by_group.setdefault(p.instance_group, []).append(p)
    for cat in by_cat:
        others[cat] = [p for p in photos if p.category != cat]
    return by_cat, by_group, others


def sample_triplet_ids(manifest: DatasetManifest, batch: int,
                       granularity: str, rng) -> list:
    """Draw (anchor_id, positive_id, negative_id) triples."""
    if granularity not in GRANULARITIES:
        raise ValueError(f"granularity must be one of {GRANULARITIES}, "
                         f"got {granularity!r}")
    if batch < 1:
        raise ValueError(f"batch must be positive, got {batch}")
    anchors = sorted(manifest.sketches("train"), key=lambda i: i.id)
    if not anchors:
        raise ValueError("manifest has no training sketches to anchor on")
    by_cat, by_group, others = _pools(manifest)
    out = []
    for _ in range(batch):
        a = anchors[int(rng.integers(len(anchors)))]
        if granularity == "category":
            pos_pool = by_cat[a.category]
            neg_pool = others[a.category]
            if not neg_pool:
                raise ValueError(
                    f"no photos outside category {a.category!r} to use as "
                    f"negatives")
        else:
            if not a.instance_group:
                raise ValueError(
                    f"sketch {a.id!r} has no instance group; instance-mode "
                    f"sampling needs one")
            pos_pool = by_group.get(a.instance_group)
            if not pos_pool:
                raise ValueError(
                    f"no photo with instance group {a.instance_group!r} "
                    f"for sketch {a.id!r}")
            neg_pool = [p for p in by_cat[a.category]
                        if p.instance_group != a.instance_group]
            if not neg_pool:
                raise ValueError(
                    f"category {a.category!r} needs a second photo for "
                    f"instance-mode negatives")
        pos = pos_pool[int(rng.integers(len(pos_pool)))]
        neg = neg_pool[int(rng.integers(len(neg_pool)))]
        out.append((a.id, pos.id, neg.id))
    return out


class ImageStore:
    """Decode-and-cache layer between a manifest and the branches.

    Full-size decodes (photos, their edge maps, parsed stroke documents)
    are cached; augmentation happens per request and is a pure function of
    the seed.
    """

    def __init__(self, manifest: DatasetManifest, *, sketch_size: int = 64,
                 photo_size: int = 64, photo_domain: str = "edgemap",
                 edge_low: float = 0.15, edge_high: float = 0.4,
                 line_width: int = 2):
        if photo_domain not in ("photo", "edgemap"):
            raise ValueError(f"photo_domain must be 'photo' or 'edgemap', "
                             f"got {photo_domain!r}")
        self.manifest = manifest
        self.sketch_size = sketch_size
        self.photo_size = photo_size
        self.photo_domain = photo_domain
        self.edge_low = edge_low
        self.edge_high = edge_high
        self.line_width = line_width
        # rasterize with headroom so the random crop has room to move
        self._sketch_load_size = int(math.ceil(sketch_size / 0.9)) + 1
        self._photos = {}
        self._edges = {}
        self._sketches = {}
        self._thin = {}
        self._eval = {}

    def _load_photo(self, item: ManifestItem) -> RasterImage:
        if item.id not in self._photos:
            with Image.open(self.manifest.resolve(item)) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
            self._photos[item.id] = RasterImage(arr, "photo")
        return self._photos[item.id]

    def _load_edgemap(self, item: ManifestItem) -> RasterImage:
        if item.id not in self._edges:
            self._edges[item.id] = extract_edges(
                self._load_photo(item), self.edge_low, self.edge_high)
        return self._edges[item.id]

    def _load_sketch(self, item: ManifestItem):
        if item.id not in self._sketches:
            path = self.manifest.resolve(item)
            if path.suffix.lower() == ".json":
                loaded = sketch_from_json(path.read_text())
            else:
                with Image.open(path) as im:
                    gray = im.convert("L").resize(
                        (self._sketch_load_size, self._sketch_load_size),
                        Image.BILINEAR)
                arr = np.asarray(gray, dtype=np.float32) / 255.0
                loaded = RasterImage(arr, "sketch")
            self._sketches[item.id] = loaded
        return self._sketches[item.id]

    def anchor_raster(self, item: ManifestItem, *, seed=0,
                      train: bool = False) -> RasterImage:
        if item.domain != "sketch":
            raise ValueError(f"item {item.id!r} is a {item.domain}, not a "
                             f"sketch")
        if not train and item.id in self._eval:
            return self._eval[item.id]
        loaded = self._load_sketch(item)
        child = np.random.default_rng(seed)
        removal_seed = int(child.integers(2 ** 32))
        geo_seed = int(child.integers(2 ** 32))
        if isinstance(loaded, RasterImage):
            thin = self._thin_full(item.id, loaded)
        elif train and len(loaded.strokes) >= 10:
            # stroke removal actually fires, so the skeleton depends on
            # the draw and cannot come from the cache
            partial = augment_stroke_removal(loaded, removal_seed)
            thin = skeletonize(rasterize(partial, self._sketch_load_size,
                                         self.line_width))
        else:
            thin = self._thin_full(item.id, loaded)
        if train:
            return augment_geometric(thin, self.sketch_size, geo_seed)
        out = center_crop(thin, self.sketch_size)
        self._eval[item.id] = out
        return out

    def _thin_full(self, key: str, loaded):
        if key not in self._thin:
            if isinstance(loaded, RasterImage):
                self._thin[key] = skeletonize(loaded)
            else:
                self._thin[key] = skeletonize(
                    rasterize(loaded, self._sketch_load_size,
                              self.line_width))
        return self._thin[key]

    def query_raster(self, sketch) -> RasterImage:
        """Eval-path preprocessing for a live stroke document.

        Same pipeline as a stored sketch outside training: rasterize,
        skeletonize, center crop. No augmentation.
        """
        thin = skeletonize(rasterize(sketch, self._sketch_load_size,
                                     self.line_width))
        return center_crop(thin, self.sketch_size)

    def photo_raster(self, item: ManifestItem, *, seed=0,
                     train: bool = False) -> RasterImage:
        if item.domain != "photo":
            raise ValueError(f"item {item.id!r} is a {item.domain}, not a "
                             f"photo")
        if self.photo_domain == "edgemap":
            base = self._load_edgemap(item)
        else:
            base = self._load_photo(item)
        if train:
            return augment_geometric(base, self.photo_size, seed)
        return center_crop(base, self.photo_size)


def sample_triplets(manifest: DatasetManifest, batch: int, granularity: str,
                    seed, store: ImageStore, train: bool = True) -> list:
    """Materialize a batch of TripletSamples, deterministic per seed."""
    rng = np.random.default_rng(seed)
    triples = sample_triplet_ids(manifest, batch, granularity, rng)
    out = []
    for aid, pid, nid in triples:
        seeds = rng.integers(2 ** 32, size=3)
        out.append(TripletSample(
            anchor=store.anchor_raster(manifest.by_id(aid),
                                       seed=int(seeds[0]), train=train),
            positive=store.photo_raster(manifest.by_id(pid),
                                        seed=int(seeds[1]), train=train),
            negative=store.photo_raster(manifest.by_id(nid),
                                        seed=int(seeds[2]), train=train),
            granularity=granularity,
            anchor_id=aid, positive_id=pid, negative_id=nid))
    return out


def to_chw(img: RasterImage) -> np.ndarray:
    """[H,W] -> [1,H,W]; [H,W,3] -> [3,H,W]; always float32."""
    arr = img.pixels
    if arr.ndim == 2:
        return arr[None, :, :].astype(np.float32)
    return np.transpose(arr, (2, 0, 1)).astype(np.float32)


def batch_chw(imgs) -> np.ndarray:
    return np.stack([to_chw(i) for i in imgs], axis=0)
