"""HTTP reward service for external RL trainers.

Wire protocol:

* ``GET /v1/health`` -> ``{"status": "ok", "samples": N}``
* ``POST /v1/score`` with ``{"items": [{"sample_id", "completion"}],
  "alpha": optional}`` -> ``{"scores": [...], "diagnostics": [...]}``,
  both lists aligned with the request items.

Scoring is stateless per request (alpha may be overridden per call), so one
server can serve concurrent ablation sweeps. Unknown sample ids turn into a
null score plus a diagnostic entry; a single-item request for an unknown id
is a 404. Malformed request bodies are 400, and a server without a dataset
answers 503.
"""

from __future__ import annotations

import threading
from typing import Mapping, Optional

import uvicorn
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .model import DatasetSample
from .reward import RewardConfig, score_rollout


class ScoreItem(BaseModel):
    sample_id: str
    completion: str


class ScoreRequest(BaseModel):
    items: list[ScoreItem]
    alpha: Optional[float] = None


def create_app(
    dataset: Mapping[str, DatasetSample] | None,
    cfg: RewardConfig = RewardConfig(),
) -> FastAPI:
    app = FastAPI(title="placement reward service")

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/v1/health")
    def health():
        if dataset is None:
            raise HTTPException(status_code=503, detail="dataset not loaded")
        return {"status": "ok", "samples": len(dataset)}

    @app.post("/v1/score")
    def score(request: ScoreRequest):
        if dataset is None:
            raise HTTPException(status_code=503, detail="dataset not loaded")
        alpha = cfg.alpha if request.alpha is None else request.alpha
        if not 0.0 <= alpha <= 1.0:
            raise HTTPException(status_code=400, detail=f"alpha must lie in [0, 1], got {alpha}")
        request_cfg = RewardConfig(alpha=alpha)

        if len(request.items) == 1 and request.items[0].sample_id not in dataset:
            raise HTTPException(
                status_code=404,
                detail=f"unknown sample_id {request.items[0].sample_id!r}",
            )

        scores: list[dict | None] = []
        diagnostics: list[dict] = []
        for item in request.items:
            sample = dataset.get(item.sample_id)
            if sample is None:
                scores.append(None)
                diagnostics.append({"sample_id": item.sample_id, "error": "unknown_sample"})
                continue
            result = score_rollout(
                item.completion, sample.ground_truth(), sample.valid_image_ids(), request_cfg
            )
            scores.append(
                {
                    "r_format": result.r_format,
                    "r_rec": result.r_rec,
                    "r_pos": result.r_pos,
                    "r_answer": result.r_answer,
                    "r_total": result.r_total,
                }
            )
            diag: dict = {"sample_id": item.sample_id, "warnings": list(result.warnings)}
            if result.malformed_reason is not None:
                diag["malformed_reason"] = result.malformed_reason
            diagnostics.append(diag)
        return {"scores": scores, "diagnostics": diagnostics}

    return app


def parse_bind_address(bind: str) -> tuple[str, int]:
    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bind address must look like host:port, got {bind!r}")
    return host, int(port)


def serve_rewards(
    bind_address: str,
    dataset: Mapping[str, DatasetSample],
    cfg: RewardConfig = RewardConfig(),
    log_level: str = "warning",
) -> None:
    """Run the reward service until interrupted."""
    host, port = parse_bind_address(bind_address)
    uvicorn.run(create_app(dataset, cfg), host=host, port=port, log_level=log_level)


class BackgroundServer:
    """In-process server on an ephemeral port, for tests and demos."""

    def __init__(self, dataset: Mapping[str, DatasetSample], cfg: RewardConfig = RewardConfig()):
        config = uvicorn.Config(
            create_app(dataset, cfg), host="127.0.0.1", port=0, log_level="error"
        )
        self._server = uvicorn.Server(config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)

    def __enter__(self) -> str:
        import time

        self._thread.start()
        deadline = time.monotonic() + 10.0
        while not self._server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("reward service failed to start within 10s")
            time.sleep(0.01)
        sock = self._server.servers[0].sockets[0]
        host, port = sock.getsockname()[:2]
        return f"http://{host}:{port}"

    def __exit__(self, *exc_info) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10.0)
