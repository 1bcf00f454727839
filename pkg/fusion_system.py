import json
import logging
import numpy as np
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from components.align import AlignParams, CameraFeatureSet, align_grad_check
from components.corruption import laser_noise, pixel_noise
from components.formats import write_csv, write_feature_map
from config import config
from models.fusion import FusionConfig, Strategy
from models.scene import AlignmentReport, SceneSpec
from providers.alignment_study import AlignmentStudy
from providers.fusion import FusionProvider, FusionResult
from providers.scene import Scene, SceneStore, generate_scene

logger = logging.getLogger(__name__)

PSEUDO_IMAGE_FILE = "pseudo_image.fmap"
RECORD_FILE = "record.json"
METRICS_FILE = "metrics.json"
ATTENTION_HEADER = ["pillar_index", "u", "v", "weight"]
GRAD_CHECK_HEADER = ["seed", "d_lidar", "d_camera", "n", "max_rel_error"]


def _write_json(path: Path, payload):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


class FusionSystem:
    """
    The main coordinator class that wires scenes, fusion pipelines and the
    alignment study together for the CLI and the HTTP surface.
    """

    def __init__(self, config_instance=config):
        logger.info("Initializing fusion system...")
        self.config = config_instance
        self.store = SceneStore()
        self.study = AlignmentStudy(self.config)

    def load_fusion_config(self, path: Optional[str], strategy: Optional[Strategy] = None,
                           seed: Optional[int] = None) -> FusionConfig:
        try:
            data = json.loads(Path(path).read_text()) if path else {}
        except Exception as e:
            logger.error(f"Failed to read fusion config {path}: {e}")
            raise
        if seed is not None:
            data["seed"] = seed
        if strategy is not None:
            data["strategy"] = strategy.value
        if data.get("strategy", Strategy.DEEP.value) == Strategy.DEEP.value and "align" not in data:
            data["align"] = {"max_n": self.config.ALIGN_MAX_N, "dropout_rate": self.config.ALIGN_DROPOUT_RATE}
        if data.get("strategy") == Strategy.LATE.value and "camera_encoder" not in data:
            data["camera_encoder"] = {}
        return FusionConfig.model_validate(data)

    def generate_scene(self, spec: SceneSpec, out_dir: str | Path, seed: Optional[int] = None) -> Scene:
        if seed is not None:
            spec = spec.model_copy(update={"seed": seed})
        scene = generate_scene(spec)
        self.store.save(scene, out_dir)
        return scene

    def run(self, scene_dir: str | Path, fusion_config: FusionConfig, out_dir: str | Path) -> FusionResult:
        """
        Runs one fusion strategy and writes the pseudo-image, the AugRecord
        and the run metrics.
        """
        scene = self.store.load(scene_dir)
        result = FusionProvider(fusion_config, self.config).run(scene)

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_feature_map(out_dir / PSEUDO_IMAGE_FILE, result.pseudo_image)
        _write_json(out_dir / RECORD_FILE, result.record.to_entries())
        _write_json(out_dir / METRICS_FILE, result.metrics)
        logger.info(f"Run outputs written to {out_dir}")
        return result

    def align_study(
        self,
        scene_dir: str | Path,
        rotations: Sequence[float],
        flips: Sequence[float],
        trials: int,
        use_inverse_aug: bool,
        out: str | Path,
        seed: Optional[int] = None,
    ) -> AlignmentReport:
        scene = self.store.load(scene_dir)
        report = self.study.run(scene, rotations, flips, trials, use_inverse_aug, seed)
        self.study.write_report(report, out)
        return report

    def attention_dump(self, scene_dir: str | Path, fusion_config: FusionConfig, out: str | Path) -> int:
        scene = self.store.load(scene_dir)
        rows = FusionProvider(fusion_config, self.config).attention_rows(scene)
        write_csv(out, ATTENTION_HEADER, rows)
        logger.info(f"Wrote {len(rows)} attention rows to {out}")
        return len(rows)

    def grad_check(
        self,
        dims: Tuple[int, int, int],
        seeds: int,
        out: Optional[str | Path] = None,
        seed: Optional[int] = None,
        eps: Optional[float] = None,
        embed_dim: int = 8,
        mlp_dim: int = 6,
    ) -> List[Tuple[int, float]]:
        """
        Compares the LearnableAlign backward pass to central finite
        differences on `seeds` random instances of size (D_l, D_c, N).
        """
        d_lidar, d_camera, n = dims
        if min(dims) < 1:
            raise ValueError(f"grad-check dims must be positive, got {dims}")
        base = self.config.DEFAULT_SEED if seed is None else seed
        eps = self.config.GRAD_CHECK_EPS if eps is None else eps

        results = []
        for instance_seed in range(base, base + seeds):
            rng = np.random.default_rng(instance_seed)
            params = AlignParams.init(d_lidar, d_camera, embed_dim, mlp_dim, seed=instance_seed, bias_scale=0.1)
            lidar = rng.normal(size=d_lidar)
            cams = CameraFeatureSet(rng.normal(size=(n, d_camera)), np.zeros((n, 2)), np.arange(n))
            results.append((instance_seed, align_grad_check(params, lidar, cams, eps)))

        worst = max(err for _, err in results) if results else 0.0
        logger.info(f"Grad check over {seeds} instances: max relative error {worst:.3e}")
        if out is not None:
            write_csv(out, GRAD_CHECK_HEADER, ((s, d_lidar, d_camera, n, err) for s, err in results))
        return results

    def corrupt(
        self,
        scene_dir: str | Path,
        laser: float,
        pixel: float,
        out_dir: str | Path,
        seed: Optional[int] = None,
        additive: bool = False,
    ) -> Scene:
        """Writes a copy of the scene with noisy intensities and camera features."""
        scene = self.store.load(scene_dir)
        rng = np.random.default_rng(self.config.DEFAULT_SEED if seed is None else seed)
        points = laser_noise(scene.points, laser, rng, additive)
        features = pixel_noise(scene.features, pixel, rng, additive)
        corrupted = scene.with_points(points).with_features(features)
        self.store.save(corrupted, out_dir)
        logger.info(f"Corrupted scene (laser={laser}, pixel={pixel}) written to {out_dir}")
        return corrupted
