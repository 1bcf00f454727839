import logging
import os
import shutil
from pathlib import Path
from fastapi import FastAPI, File, UploadFile, HTTPException, Depends
from fastapi.middleware.cors import CORSMiddleware
from models.api import (
    AlignStudyRequest,
    AlignStudyResponse,
    GradCheckRequest,
    GradCheckResponse,
    GradCheckResult,
    RunRequest,
    RunResponse,
    SceneRequest,
    SceneResponse,
    UploadResponse,
)

from components.formats import read_points
from config import config, setup_logging
from fusion_system import FusionSystem

setup_logging()
logger = logging.getLogger(__name__)

# Create data directory if it doesn't exist
os.makedirs(config.DATA_DIR, exist_ok=True)

app = FastAPI(
    title="fusionkit",
    description="Lidar-camera alignment and fusion pipelines over synthetic scenes.",
    version="1.0.0"
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["http://localhost:5173", "http://localhost:3000"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

try:
    fusion_system = FusionSystem(config)
except Exception as e:
    logger.critical(f"Failed to initialize FusionSystem: {e}", exc_info=True)
    fusion_system = None


# Dependency to check if the fusion system is healthy
def get_fusion_system():
    if fusion_system is None:
        logger.error("Fusion system is not initialized. Endpoint cannot serve.")
        raise HTTPException(
            status_code=503,
            detail="Fusion system is not available. Check logs."
        )
    return fusion_system


def scene_dir(name: str) -> Path:
    path = Path(config.DATA_DIR) / "scenes" / name
    if not path.is_dir():
        raise HTTPException(status_code=404, detail=f"Scene '{name}' not found.")
    return path


# --- API Endpoints ---
@app.get("/", tags=["Health Check"])
async def root():
    """
    Root endpoint to check if the API is running.
    """
    return {"status": "ok", "message": "fusionkit API is running."}


@app.post("/upload", response_model=UploadResponse, tags=["Data"])
async def upload_points(file: UploadFile = File(...)):
    """
    Uploads a point cloud (.csv or .pclf) and reports what it holds.
    """
    filename = os.path.basename(file.filename or "")
    if not filename.lower().endswith((".csv", ".pclf")):
        logger.warning(f"Upload rejected: unsupported file {filename}")
        raise HTTPException(
            status_code=400,
            detail="Invalid file type. Only .csv and .pclf point clouds are allowed."
        )

    upload_dir = Path(config.DATA_DIR) / "uploads"
    upload_dir.mkdir(parents=True, exist_ok=True)
    file_path = upload_dir / filename

    try:
        with open(file_path, "wb") as buffer:
            shutil.copyfileobj(file.file, buffer)
        logger.info(f"File saved: {file_path}")
    except Exception as e:
        logger.error(f"Failed to save file {filename}: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Failed to save file: {e}")
    finally:
        file.file.close()

    try:
        cloud = read_points(file_path)
    except ValueError as e:
        logger.warning(f"Rejected malformed point cloud {filename}: {e}")
        os.remove(file_path)  # removes the saved file on failure
        raise HTTPException(status_code=400, detail=f"Malformed point cloud: {e}")

    return UploadResponse(
        message="Point cloud uploaded successfully.",
        filename=filename,
        points=len(cloud),
        frames=sorted(int(f) for f in set(cloud.frame.tolist())),
    )


@app.post("/scenes", response_model=SceneResponse, tags=["Scenes"])
async def create_scene(request: SceneRequest, system: FusionSystem = Depends(get_fusion_system)):
    """
    Generates a synthetic scene and stores it under its name.
    """
    out_dir = Path(config.DATA_DIR) / "scenes" / request.name
    try:
        scene = system.generate_scene(request.spec, out_dir)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return SceneResponse(
        name=request.name,
        points=len(scene.points),
        visible_points=len(scene.correspondences),
        feature_map=[scene.features.height, scene.features.width, scene.features.channels],
    )


@app.post("/scenes/{name}/run", response_model=RunResponse, tags=["Fusion"])
async def run_fusion(name: str, request: RunRequest, system: FusionSystem = Depends(get_fusion_system)):
    """
    Runs a fusion strategy on a stored scene.
    """
    directory = scene_dir(name)
    try:
        cfg = request.config or system.load_fusion_config(None)
        if request.strategy is not None:
            cfg = cfg.with_strategy(request.strategy)
        out_dir = Path(config.DATA_DIR) / "runs" / name / cfg.strategy.value
        result = system.run(directory, cfg, out_dir)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Fusion run on '{name}' failed: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Fusion run failed: {e}")
    return RunResponse(metrics=result.metrics, record=result.record.to_entries())


@app.post("/scenes/{name}/align-study", response_model=AlignStudyResponse, tags=["Alignment"])
async def align_study(name: str, request: AlignStudyRequest, system: FusionSystem = Depends(get_fusion_system)):
    """
    Reprojection error per augmentation setting for a stored scene.
    """
    directory = scene_dir(name)
    try:
        scene = system.store.load(directory)
        report = system.study.run(scene, request.rotations, request.flips, request.trials,
                                  request.use_inverse_aug, request.seed)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Alignment study on '{name}' failed: {e}", exc_info=True)
        raise HTTPException(status_code=500, detail=f"Alignment study failed: {e}")
    return AlignStudyResponse(rows=report.rows)


@app.post("/grad-check", response_model=GradCheckResponse, tags=["Alignment"])
async def grad_check(request: GradCheckRequest, system: FusionSystem = Depends(get_fusion_system)):
    """
    Finite-difference check of the LearnableAlign backward pass.
    """
    try:
        results = system.grad_check(tuple(request.dims), request.seeds, seed=request.seed)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return GradCheckResponse(
        results=[GradCheckResult(seed=s, max_rel_error=err) for s, err in results],
        max_rel_error=max(err for _, err in results),
    )


if __name__ == "__main__":
    import uvicorn
    logger.info("Starting Uvicorn server...")
    uvicorn.run(app, host="0.0.0.0", port=8000)
