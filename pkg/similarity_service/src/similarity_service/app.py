"""HTTP surface: POST /score, POST /score_batch, GET /health."""

from __future__ import annotations

from contextlib import asynccontextmanager

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .config import ServiceConfig
from .encoder import build_encoder
from .scoring import greedy_match_score, idf_weights


class ScoreRequest(BaseModel):
    candidate: str
    reference: str


class BatchRequest(BaseModel):
    pairs: list[ScoreRequest]


class ScoreResponse(BaseModel):
    precision: float
    recall: float
    f1: float
    model_id: str
    tokens_candidate: int
    tokens_reference: int


class BatchResponse(BaseModel):
    scores: list[ScoreResponse]


def create_app(config: ServiceConfig = None) -> FastAPI:
    if config is None:
        config = ServiceConfig()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        # load once, share read-only across requests
        app.state.encoder = build_encoder(config.model_id, config.max_seq_len)
        app.state.idf_table = config.load_idf_table()
        yield

    app = FastAPI(title="phrase-similarity", lifespan=lifespan)
    app.state.config = config

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def encoder_or_503(request: Request):
        encoder = getattr(request.app.state, "encoder", None)
        if encoder is None:
            raise HTTPException(status_code=503, detail="model not loaded yet")
        return encoder

    def score_pair(request: Request, pair: ScoreRequest) -> ScoreResponse:
        encoder = encoder_or_503(request)
        candidate = pair.candidate.strip()
        reference = pair.reference.strip()
        if not candidate or not reference:
            raise HTTPException(
                status_code=400,
                detail="candidate and reference must be non-empty; empty phrases "
                       "are decided upstream and must never reach this service",
            )
        try:
            cand_tokens, cand_emb = encoder.embed_text(candidate)
            ref_tokens, ref_emb = encoder.embed_text(reference)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        table = request.app.state.idf_table
        score = greedy_match_score(
            cand_emb, ref_emb,
            candidate_weights=idf_weights(cand_tokens, table),
            reference_weights=idf_weights(ref_tokens, table),
            baseline=request.app.state.config.baseline_rescale,
        )
        return ScoreResponse(
            precision=score.precision, recall=score.recall, f1=score.f1,
            model_id=encoder.model_id,
            tokens_candidate=score.tokens_candidate,
            tokens_reference=score.tokens_reference,
        )

    @app.get("/health")
    async def health(request: Request):
        encoder = getattr(request.app.state, "encoder", None)
        if encoder is None:
            return JSONResponse(status_code=503,
                                content={"status": "loading", "model_id": None})
        return {"status": "ok", "model_id": encoder.model_id}

    @app.post("/score", response_model=ScoreResponse)
    async def score(request: Request, body: ScoreRequest):
        return score_pair(request, body)

    @app.post("/score_batch", response_model=BatchResponse)
    async def score_batch(request: Request, body: BatchRequest):
        return BatchResponse(scores=[score_pair(request, p) for p in body.pairs])

    return app
