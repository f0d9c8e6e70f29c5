import logging
from contextlib import asynccontextmanager

import uvicorn
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app import __version__
from app.api.endpoints import router as api_router

logger = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    logger.info("starting zicount API %s", __version__)
    yield
    logger.info("shutting down zicount API")


app = FastAPI(
    title="zicount API",
    description="Zero-inflated multivariate count models: fit, simulate, compare",
    version=__version__,
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(api_router, prefix="/api/v1")


@app.get("/")
async def root():
    return {"message": "zicount API", "version": __version__, "status": "healthy"}


@app.get("/health")
async def health_check():
    return {"status": "healthy", "service": "zicount", "models": ["hnb", "zinb", "tlnpn"]}


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    uvicorn.run("app.main:app", host="0.0.0.0", port=8000, reload=True)
