"""HTTP surface: POST /execute, POST /close, GET /health."""

from __future__ import annotations

import argparse
import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .manager import ManagerConfig, PoolExhausted, SessionManager

logger = logging.getLogger("sandbox_service")


class ExecuteIn(BaseModel):
    session_id: str = Field(min_length=1)
    code: str
    timeout_ms: int = 2000


class ExecuteOut(BaseModel):
    status: str
    stdout: str
    stderr: str
    duration_ms: int


class CloseIn(BaseModel):
    session_id: str


def create_app(config: ManagerConfig | None = None) -> FastAPI:
    config = config or ManagerConfig()
    manager = SessionManager(config)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        manager.start_sweeper(interval_s=min(30.0, config.idle_ttl_s))
        yield
        await manager.stop_sweeper()
        await manager.close_all()

    app = FastAPI(title="sandbox-service", lifespan=lifespan)
    app.state.manager = manager

    @app.post("/execute", response_model=ExecuteOut)
    async def execute(request: ExecuteIn) -> ExecuteOut:
        if not request.code:
            raise HTTPException(status_code=400, detail="code must be non-empty")
        if request.timeout_ms < 1:
            raise HTTPException(status_code=400, detail="timeout_ms must be positive")
        if request.timeout_ms > config.timeout_cap_ms:
            raise HTTPException(
                status_code=400,
                detail=f"timeout_ms exceeds service cap of {config.timeout_cap_ms}",
            )
        try:
            result = await manager.execute(request.session_id, request.code, request.timeout_ms)
        except PoolExhausted as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc
        return ExecuteOut(**result)

    @app.post("/close")
    async def close(request: CloseIn) -> dict:
        await manager.close(request.session_id)
        return {"ok": True}

    @app.get("/health")
    async def health() -> dict:
        return {"status": "ok", "live_sessions": manager.live_count}

    return app


def main(argv: list[str] | None = None) -> int:
    import uvicorn

    parser = argparse.ArgumentParser(prog="sandbox-service")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=6000)
    parser.add_argument("--pool-size", type=int, default=16)
    parser.add_argument("--idle-ttl-s", type=float, default=300.0)
    parser.add_argument("--timeout-cap-ms", type=int, default=30_000)
    parser.add_argument(
        "--import-allowlist",
        default=None,
        help="comma-separated module names; omit for no restriction",
    )
    args = parser.parse_args(argv)
    allowlist = (
        tuple(m.strip() for m in args.import_allowlist.split(",") if m.strip())
        if args.import_allowlist
        else None
    )
    config = ManagerConfig(
        max_sessions=args.pool_size,
        idle_ttl_s=args.idle_ttl_s,
        timeout_cap_ms=args.timeout_cap_ms,
        import_allowlist=allowlist,
    )
    uvicorn.run(create_app(config), host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
