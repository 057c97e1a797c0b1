from __future__ import annotations

from ninja import NinjaAPI

from runs.api import router as runs_router


api = NinjaAPI(
    title="Elastic SGD Lab API",
    version="1.0.0",
    docs_url="/docs",
)

api.add_router("/", runs_router)


@api.get("/health", tags=["health"])
def health_check(request):
    return {"status": "ok"}
