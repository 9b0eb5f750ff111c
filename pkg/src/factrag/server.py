"""HTTP service: POST /query, GET /stats, GET /healthz.

Responses use a stable envelope {ok, data, error, usage}. The engine's store
snapshot is read-only here; concurrency is bounded by the gateway.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from factrag.engine import Engine


def _envelope(data=None, error=None, usage=None) -> dict:
    return {"ok": error is None, "data": data, "error": error, "usage": usage}


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="factrag")

    @app.get("/healthz")
    def healthz() -> PlainTextResponse:
        return PlainTextResponse("ok")

    @app.get("/stats")
    def stats() -> JSONResponse:
        return JSONResponse(_envelope(data=engine.stats()))

    @app.post("/query")
    async def query(request: Request) -> JSONResponse:
        try:
            body = await request.json()
        except Exception:
            return JSONResponse(
                _envelope(error="request body is not valid JSON"), status_code=400
            )
        question = body.get("question") if isinstance(body, dict) else None
        if not question or not isinstance(question, str):
            return JSONResponse(
                _envelope(error="missing 'question' string field"), status_code=400
            )
        try:
            outcome = engine.answer(question)
        except Exception as exc:
            return JSONResponse(_envelope(error=str(exc)), status_code=500)
        return JSONResponse(
            _envelope(
                data={
                    "answer": outcome.result.answer,
                    "reasoning": outcome.result.reasoning,
                    "facts": [
                        {
                            "id": a.fact.hyperedge.id,
                            "description": a.fact.hyperedge.description,
                            "score": a.score,
                            "via": sorted(a.via),
                            "entities": [e.name for e in a.fact.entities],
                        }
                        for a in outcome.bundle.facts
                    ],
                    "chunks": [
                        {"id": c.chunk_id, "similarity": c.similarity}
                        for c in outcome.bundle.chunks
                    ],
                },
                usage=outcome.usage,
            )
        )

    return app
