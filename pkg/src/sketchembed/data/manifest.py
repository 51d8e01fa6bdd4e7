"""Dataset manifests: what items exist, where they live, how they relate.

The on-disk form is one CSV record per item:
``id, relative path, category, instance_group, domain, split``.
``instance_group`` ties a sketch to the photo it depicts; it may be empty
for category-only data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

ITEM_DOMAINS = ("sketch", "photo")
SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class ManifestItem:
    id: str
    path: str
    category: str
    instance_group: str
    domain: str
    split: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("item id must be non-empty")
        if not self.path:
            raise ValueError(f"item {self.id!r} has an empty path")
        if not self.category:
            raise ValueError(f"item {self.id!r} has an empty category")
        if self.domain not in ITEM_DOMAINS:
            raise ValueError(f"item {self.id!r}: unknown domain "
                             f"{self.domain!r}, expected one of "
                             f"{ITEM_DOMAINS}")
        if self.split not in SPLITS:
            raise ValueError(f"item {self.id!r}: unknown split "
                             f"{self.split!r}, expected one of {SPLITS}")


class DatasetManifest:
    """An ordered list of items rooted at a directory."""

    def __init__(self, items, root):
        self.items = list(items)
        self.root = Path(root)
        self._by_id = {}
        for item in self.items:
            if item.id in self._by_id:
                raise ValueError(f"duplicate item id {item.id!r}")
            self._by_id[item.id] = item
        photo_cats = {i.category for i in self.items if i.domain == "photo"}
        orphans = sorted({i.category for i in self.items
                          if i.domain == "sketch"} - photo_cats)
        if orphans:
            raise ValueError(
                f"categories with sketches but no photos: {orphans}")

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def categories(self):
        return sorted({i.category for i in self.items})

    def by_id(self, item_id: str) -> ManifestItem:
        try:
            return self._by_id[item_id]
        except KeyError:
            raise KeyError(f"no item with id {item_id!r}") from None

    def sketches(self, split=None):
        return [i for i in self.items if i.domain == "sketch"
                and (split is None or i.split == split)]

    def photos(self, split=None):
        return [i for i in self.items if i.domain == "photo"
                and (split is None or i.split == split)]

    def filter_categories(self, categories) -> "DatasetManifest":
        wanted = set(categories)
        missing = wanted - set(self.categories)
        if missing:
            raise ValueError(f"unknown categories: {sorted(missing)}")
        kept = [i for i in self.items if i.category in wanted]
        return DatasetManifest(kept, self.root)

    def resolve(self, item: ManifestItem) -> Path:
        return self.root / item.path

    def save_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for i in self.items:
                writer.writerow([i.id, i.path, i.category, i.instance_group,
                                 i.domain, i.split])

    @classmethod
    def load_csv(cls, path, root=None) -> "DatasetManifest":
        path = Path(path)
        if root is None:
            root = path.parent
        items = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row:
                    continue
                if len(row) != 6:
                    raise ValueError(
                        f"{path}:{lineno}: expected 6 fields "
                        f"(id, path, category, instance_group, domain, "
                        f"split), got {len(row)}")
                items.append(ManifestItem(*row))
        return cls(items, root)


def manifest_from_category_tree(root, val_fraction: float = 0.25,
                                seed: int = 0) -> DatasetManifest:
    """Build a manifest from the common category-folder layout.

    Expects ``root/photos/<category>/*`` and ``root/sketches/<category>/*``
    (PNG/JPG images, or stroke-document JSON for sketches). Sketches are
    split into train/validation per category with a seeded shuffle; photos
    all land in train. A sketch whose file stem matches a photo stem in the
    same category gets that photo's instance group.
    """
    import numpy as np

    root = Path(root)
    if not (0.0 <= val_fraction < 1.0):
        raise ValueError(f"val_fraction must be in [0,1), got {val_fraction}")
    photo_root = root / "photos"
    sketch_root = root / "sketches"
    if not photo_root.is_dir():
        raise ValueError(f"no photos/ directory under {root}")
    items = []
    photo_stems = {}
    for cat_dir in sorted(photo_root.iterdir()):
        if not cat_dir.is_dir():
            continue
        cat = cat_dir.name
        for f in sorted(cat_dir.iterdir()):
            if f.suffix.lower() not in (".png", ".jpg", ".jpeg"):
                continue
            group = f"{cat}/{f.stem}"
            photo_stems.setdefault(cat, set()).add(f.stem)
            items.append(ManifestItem(
                id=f"photo:{cat}/{f.stem}",
                path=str(f.relative_to(root)), category=cat,
                instance_group=group, domain="photo", split="train"))
    if sketch_root.is_dir():
        rng = np.random.default_rng(seed)
        for cat_dir in sorted(sketch_root.iterdir()):
            if not cat_dir.is_dir():
                continue
            cat = cat_dir.name
            files = [f for f in sorted(cat_dir.iterdir())
                     if f.suffix.lower() in (".png", ".jpg", ".jpeg",
                                             ".json")]
            order = rng.permutation(len(files))
            n_val = int(round(val_fraction * len(files)))
            val_idx = set(order[:n_val].tolist())
            for k, f in enumerate(files):
                stems = photo_stems.get(cat, set())
                group = f"{cat}/{f.stem}" if f.stem in stems else ""
                items.append(ManifestItem(
                    id=f"sketch:{cat}/{f.stem}",
                    path=str(f.relative_to(root)), category=cat,
                    instance_group=group, domain="sketch",
                    split="validation" if k in val_idx else "train"))
    return DatasetManifest(items, root)
