"""FastAPI service exposing the pipeline.

Domain errors surface as HTTP 400 with a body {"error": <kind>, "detail":
...}; the kind strings (config / data / divergence / artifact-mismatch) are
what the CLI maps onto exit codes.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import pipeline
from ..errors import GaitMorphError
from . import schemas

app = FastAPI(title="gaitmorph", version="0.1.0")


@app.exception_handler(GaitMorphError)
async def gaitmorph_error_handler(request: Request, exc: GaitMorphError):
    return JSONResponse(status_code=400, content={"error": exc.kind, "detail": str(exc)})


@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/gen")
def gen(req: schemas.GenRequest):
    return pipeline.run_gen(
        out_path=req.out_path, split=req.split, subjects=req.subjects,
        walks_per_variation=req.walks_per_variation,
        variations=[v.model_dump() for v in req.variations],
        T=req.T, J=req.J, noise_std=req.noise_std, seed=req.seed)


@app.post("/train")
def train(req: schemas.TrainRequest):
    return pipeline.run_train(
        dataset_path=req.dataset_path, checkpoint_out=req.checkpoint_out,
        metrics_out=req.metrics_out, model=req.model.model_dump(),
        K=req.K, steps=req.steps, batch_size=req.batch_size, seed=req.seed,
        log_interval=req.log_interval, commit_weight=req.commit_weight,
        ortho_weight=req.ortho_weight, lr_min=req.lr_min, lr_max=req.lr_max,
        cycle_len=req.cycle_len, weight_decay=req.weight_decay)


@app.post("/fit-maps")
def fit_maps(req: schemas.FitMapsRequest):
    return pipeline.run_fit_maps(
        checkpoint=req.checkpoint, dataset_path=req.dataset_path,
        source=req.source.model_dump(), target=req.target.model_dump(),
        out_path=req.out_path)


@app.post("/morph")
def morph(req: schemas.MorphRequest):
    return pipeline.run_morph(
        checkpoint=req.checkpoint, maps_path=req.maps_path,
        dataset_path=req.dataset_path, out_path=req.out_path)


@app.post("/fgd")
def fgd(req: schemas.FgdRequest):
    return pipeline.run_fgd(
        checkpoint=req.checkpoint, dataset_path=req.dataset_path,
        maps_path=req.maps_path)


@app.post("/stats")
def stats(req: schemas.StatsRequest):
    return pipeline.run_stats(
        checkpoint=req.checkpoint, dataset_path=req.dataset_path,
        maps_path=req.maps_path, num_positions=req.num_positions)
