"""Data handling: rasters, vector sketches, synthetic datasets, manifests,
and triplet sampling."""

from .imaging import (RasterImage, apply_geometric, augment_geometric,
                      center_crop, draw_geometric_params, extract_edges,
                      GeometricParams, skeletonize)
from .strokes import (augment_stroke_removal, rasterize, sketch_from_doc,
                      sketch_from_json, StrokeSketch)
from .manifest import (DatasetManifest, ManifestItem,
                       manifest_from_category_tree)
from .synthetic import synth_generate
from .sampling import (batch_chw, ImageStore, sample_triplet_ids,
                       sample_triplets, to_chw, TripletSample)

__all__ = [
    "RasterImage", "GeometricParams", "skeletonize", "extract_edges",
    "draw_geometric_params", "apply_geometric", "augment_geometric",
    "center_crop",
    "StrokeSketch", "sketch_from_doc", "sketch_from_json", "rasterize",
    "augment_stroke_removal",
    "ManifestItem", "DatasetManifest", "manifest_from_category_tree",
    "synth_generate",
    "TripletSample", "ImageStore", "sample_triplet_ids", "sample_triplets",
    "to_chw", "batch_chw",
]
