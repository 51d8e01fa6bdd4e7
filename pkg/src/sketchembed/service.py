"""HTTP query service over one immutable model + index snapshot.

The sketchpad frontend posts stroke documents to /query and pulls result
thumbnails from /image/{id}. Everything is read-only: restarting the
service re-reads the same checkpoint and index files and serves identical
rankings.
"""

import hashlib
import mimetypes
import threading
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import Body, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse

from .data.manifest import DatasetManifest
from .data.sampling import batch_chw
from .data.strokes import sketch_from_doc
from .index import EmbeddingIndex
from .models import load_triplet
from .training import QUERY_SCALE, default_store

MAX_CONCURRENT_EMBEDS = 4


def _fingerprint(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


class ServiceState:
    """Everything a request handler needs, loaded once at startup."""

    def __init__(self, cfg, checkpoint_path=None):
        self.cfg = cfg
        self.manifest = DatasetManifest.load_csv(cfg.manifest,
                                                 root=cfg.data_root)
        ckpt = Path(checkpoint_path) if checkpoint_path else None
        if ckpt is None:
            best = cfg.checkpoint_dir / "best.sbf"
            ckpt = best if best.exists() else cfg.checkpoint_dir / "last.sbf"
        self.net = load_triplet(ckpt, cfg.scheme, cfg.pairing,
                                preset=cfg.preset, seed=cfg.seed)
        self.index = EmbeddingIndex.load(cfg.index_path)
        self.store = default_store(self.net, self.manifest)
        self.model_fingerprint = _fingerprint(ckpt)
        self.index_fingerprint = _fingerprint(cfg.index_path)
        self._embed_slots = threading.BoundedSemaphore(MAX_CONCURRENT_EMBEDS)

    def embed_sketch(self, sketch):
        raster = self.store.query_raster(sketch)
        with self._embed_slots:
            return self.net.anchor.embed(batch_chw([raster]),
                                         training=False).data[0]


def build_app(cfg, checkpoint_path=None) -> FastAPI:
    """Assemble the service; model and index load during startup."""

    @asynccontextmanager
    async def lifespan(app):
        app.state.svc = ServiceState(cfg, checkpoint_path)
        yield

    app = FastAPI(title="sketchembed query service", lifespan=lifespan)
    # the sketchpad page is usually served from another local port
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["GET", "POST"], allow_headers=["*"])
    app.state.svc = None

    def ready() -> ServiceState:
        svc = app.state.svc
        if svc is None:
            raise HTTPException(status_code=503,
                                detail="index is still loading")
        return svc

    @app.get("/health")
    def health():
        svc = ready()
        return {
            "status": "ok",
            "model_fingerprint": svc.model_fingerprint,
            "index_fingerprint": svc.index_fingerprint,
            "corpus_size": len(svc.index),
        }

    @app.get("/config")
    def config():
        svc = ready()
        return {
            "top_k": svc.cfg.top_k,
            "dim": svc.index.dim,
            "corpus_size": len(svc.index),
            "scheme": svc.cfg.scheme,
            "pairing": svc.cfg.pairing,
            "query_scale": QUERY_SCALE,
        }

    @app.post("/query")
    def query(doc: dict = Body(...), k: int = None):
        svc = ready()
        if k is None:
            k = svc.cfg.top_k
        if k < 1:
            raise HTTPException(status_code=400,
                                detail=f"k must be positive, got {k}")
        try:
            sketch = sketch_from_doc(doc)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        embedding = svc.embed_sketch(sketch)
        ranking = svc.index.query(embedding, k=min(k, len(svc.index)),
                                  scale=QUERY_SCALE)
        results = [{
            "id": rid,
            "distance": float(dist),
            "thumbnail": f"/image/{rid}",
            "category": svc.index.category(rid),
        } for rid, dist in ranking]
        return {"k": k, "results": results}

    @app.get("/image/{item_id:path}")
    def image(item_id: str):
        svc = ready()
        try:
            item = svc.manifest.by_id(item_id)
        except KeyError:
            raise HTTPException(status_code=404,
                                detail=f"no item with id {item_id!r}") \
                from None
        if item.domain != "photo":
            raise HTTPException(status_code=404,
                                detail=f"{item_id!r} has no image bytes")
        path = svc.manifest.resolve(item)
        if not path.exists():
            raise HTTPException(status_code=404,
                                detail=f"image file missing for "
                                       f"{item_id!r}")
        media, _ = mimetypes.guess_type(str(path))
        return FileResponse(path, media_type=media or "image/png")

    return app
