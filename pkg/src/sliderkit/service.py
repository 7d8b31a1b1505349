"""HTTP read/serve surface over a saved manifest directory.

The service never mutates a manifest; training and labeling stay on the
command line. Every response carries the manifest hash so clients can
detect a swap under their feet, and generation runs through one bounded
FIFO queue with a per-request deadline.

Images return as PNG bytes by default (the request echo rides in a
header); `?encoding=base64` switches to a JSON envelope. Identical
(prompt, seed, activations, gate) give byte-identical PNGs here and in
the CLI because both funnel through the same encoder.
"""

from __future__ import annotations

import asyncio
import base64
import math
import random
from pathlib import Path

import torch
from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, Field

from .adapters import SliderActivation
from .composer import GenerationRequest, TimestepGate, generate, sparse_random_activation
from .config import canonical_json
from .errors import SliderKitError
from .imaging import grid_sheet, image_to_png
from .manifest import load_manifest

SCALE_LIMIT = 10.0
MAX_GRID_CELLS = 64
DEFAULT_QUEUE_DEPTH = 8
DEFAULT_DEADLINE_SECONDS = 60.0


class ActivationBody(BaseModel):
    adapter_id: str
    scale: float


class GateBody(BaseModel):
    start: int
    end: int


class GenerateBody(BaseModel):
    prompt: str | None = None
    seed: int = 0
    activations: list[ActivationBody] = Field(default_factory=list)
    gate: GateBody | None = None
    num_steps: int | None = None
    guidance_scale: float = 1.0
    manifest_hash: str | None = None


class GridBody(BaseModel):
    seeds: list[int]
    activations: list[list[ActivationBody]]
    prompt: str | None = None
    num_steps: int | None = None
    gate: GateBody | None = None
    manifest_hash: str | None = None


class RandomBody(BaseModel):
    k: int = 3
    scale_magnitude: float = 1.0
    seed: int | None = None
    manifest_hash: str | None = None


def _bad(status: int, error: str, **extra):
    return HTTPException(status_code=status, detail={"error": error, **extra})


def _check_activations(entries: list[ActivationBody], known: set[str], path: str):
    for i, act in enumerate(entries):
        if act.adapter_id not in known:
            raise _bad(404, f"unknown slider {act.adapter_id!r}",
                       adapter_id=act.adapter_id, field=f"{path}[{i}].adapter_id")
        if not math.isfinite(act.scale) or abs(act.scale) > SCALE_LIMIT:
            raise _bad(400, f"scale must be finite and within [-{SCALE_LIMIT}, {SCALE_LIMIT}]",
                       field=f"{path}[{i}].scale")


def create_app(
    manifest_root,
    backend=None,
    queue_depth: int = DEFAULT_QUEUE_DEPTH,
    deadline_seconds: float = DEFAULT_DEADLINE_SECONDS,
) -> FastAPI:
    bundle = load_manifest(Path(manifest_root))
    if backend is None:
        from .backends import get_backend

        backend = get_backend(bundle.manifest.backend_id)

    app = FastAPI(title="slider service")
    state = app.state
    state.bundle = bundle
    state.backend = backend
    state.manifest_hash = bundle.manifest_hash
    state.queue_depth = queue_depth
    state.deadline_seconds = deadline_seconds
    state.inflight = 0
    state.gpu_lock = asyncio.Lock()
    state.rng = random.Random()
    known_ids = {entry.adapter_id for entry in bundle.manifest.sliders}

    @app.middleware("http")
    async def stamp_manifest_hash(request: Request, call_next):
        response = await call_next(request)
        response.headers["X-Manifest-Hash"] = state.manifest_hash
        return response

    @app.exception_handler(SliderKitError)
    async def domain_error(request: Request, exc: SliderKitError):
        return JSONResponse(status_code=400, content={"detail": {"error": str(exc)}})

    def check_client_hash(client_hash: str | None):
        if client_hash is not None and client_hash != state.manifest_hash:
            raise _bad(409, "manifest hash mismatch; reload the manifest",
                       server=state.manifest_hash, client=client_hash)

    def build_request(body: GenerateBody | GridBody, seed: int,
                      activations: list[ActivationBody]) -> GenerationRequest:
        gate = TimestepGate(body.gate.start, body.gate.end) if body.gate else None
        return GenerationRequest(
            prompt=body.prompt or bundle.manifest.prompt,
            seed=seed,
            activations=tuple(SliderActivation(a.adapter_id, a.scale) for a in activations),
            num_steps=body.num_steps,
            guidance_scale=getattr(body, "guidance_scale", 1.0),
            gate=gate,
        )

    async def run_queued(fn):
        if state.inflight >= state.queue_depth:
            raise _bad(429, "generation queue is full; retry shortly",
                       queue_depth=state.queue_depth)
        state.inflight += 1
        try:
            async with state.gpu_lock:
                return await asyncio.wait_for(
                    asyncio.to_thread(fn), timeout=state.deadline_seconds)
        except asyncio.TimeoutError:
            raise _bad(504, f"generation exceeded the {state.deadline_seconds:.0f}s deadline")
        finally:
            state.inflight -= 1

    def echo_of(req: GenerationRequest) -> dict:
        return {
            "prompt": req.prompt,
            "seed": req.seed,
            "activations": [{"adapter_id": a.adapter_id, "scale": a.scale} for a in req.activations],
            "gate": {"start": req.gate.start, "end": req.gate.end} if req.gate else None,
            "num_steps": req.num_steps,
            "guidance_scale": req.guidance_scale,
        }

    def png_or_json(png: bytes, echo: dict, encoding: str) -> Response:
        if encoding == "base64":
            return JSONResponse({
                "image_base64": base64.b64encode(png).decode("ascii"),
                "request": echo,
                "manifest_hash": state.manifest_hash,
            })
        return Response(content=png, media_type="image/png",
                        headers={"X-Request-Echo": canonical_json(echo)})

    @app.get("/manifest")
    async def get_manifest():
        return {"manifest": bundle.manifest.to_document(), "manifest_hash": state.manifest_hash}

    @app.get("/sliders")
    async def get_sliders():
        return {"sliders": [entry.to_dict() for entry in bundle.manifest.sliders],
                "manifest_hash": state.manifest_hash}

    @app.get("/spectrum")
    async def get_spectrum():
        directions = bundle.directions
        return {
            "explained_variance": [float(v) for v in directions.explained_variance],
            "explained_variance_ratio": [float(v) for v in directions.explained_variance_ratio],
            "n_components": directions.n_components,
            "n_samples": directions.n_samples,
            "manifest_hash": state.manifest_hash,
        }

    @app.post("/generate")
    async def post_generate(body: GenerateBody, encoding: str = Query("png", pattern="^(png|base64)$")):
        check_client_hash(body.manifest_hash)
        _check_activations(body.activations, known_ids, "activations")
        req = build_request(body, body.seed, body.activations)
        result = await run_queued(lambda: generate(backend, req, adapters=bundle.adapters))
        return png_or_json(image_to_png(result.image), echo_of(req), encoding)

    @app.post("/grid")
    async def post_grid(body: GridBody, encoding: str = Query("png", pattern="^(png|base64)$")):
        check_client_hash(body.manifest_hash)
        if not body.seeds:
            raise _bad(400, "seeds must be non-empty", field="seeds")
        if not body.activations:
            raise _bad(400, "activations must be non-empty", field="activations")
        cells = len(body.seeds) * len(body.activations)
        if cells > MAX_GRID_CELLS:
            raise _bad(400, f"grid of {cells} cells exceeds the {MAX_GRID_CELLS}-cell cap",
                       field="seeds")
        for j, column in enumerate(body.activations):
            _check_activations(column, known_ids, f"activations[{j}]")

        def render():
            rows = []
            for seed in body.seeds:
                row = []
                for column in body.activations:
                    req = build_request(body, seed, column)
                    row.append(generate(backend, req, adapters=bundle.adapters).image)
                rows.append(row)
            return grid_sheet(rows)

        sheet = await run_queued(render)
        echo = {"seeds": body.seeds,
                "activations": [[{"adapter_id": a.adapter_id, "scale": a.scale} for a in col]
                                for col in body.activations]}
        return png_or_json(image_to_png(sheet), echo, encoding)

    @app.post("/random")
    async def post_random(body: RandomBody):
        check_client_hash(body.manifest_hash)
        n = len(known_ids)
        if not 0 <= body.k <= n:
            raise _bad(400, f"k must be in [0, {n}]", field="k")
        if not math.isfinite(body.scale_magnitude) or not 0 <= body.scale_magnitude <= SCALE_LIMIT:
            raise _bad(400, f"scale_magnitude must be in [0, {SCALE_LIMIT}]", field="scale_magnitude")
        gen = torch.Generator()
        gen.manual_seed(body.seed if body.seed is not None else state.rng.getrandbits(62))
        acts = sparse_random_activation(
            sorted(known_ids), k=body.k, scale_magnitude=body.scale_magnitude, generator=gen)
        return {"activations": [{"adapter_id": a.adapter_id, "scale": a.scale} for a in acts],
                "manifest_hash": state.manifest_hash}

    @app.get("/health")
    async def health():
        return {"status": "ok", "inflight": state.inflight, "manifest_hash": state.manifest_hash}

    return app


def serve(manifest_root, host: str = "127.0.0.1", port: int = 8000,
          backend=None, queue_depth: int = DEFAULT_QUEUE_DEPTH,
          deadline_seconds: float = DEFAULT_DEADLINE_SECONDS):
    """Blocking entry point used by the CLI serve verb."""
    import uvicorn

    app = create_app(manifest_root, backend=backend, queue_depth=queue_depth,
                     deadline_seconds=deadline_seconds)
    uvicorn.run(app, host=host, port=port, log_level="warning")
