import logging
import math
import numpy as np
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

from components.augment import apply_pipeline, inverse_aug_points
from components.formats import write_csv
from components.geometry import project_points
from config import config
from models.augment import AugConfig, AugRecord
from models.scene import AlignmentReport, AlignmentRow
from providers.scene import Scene

logger = logging.getLogger(__name__)

REPORT_HEADER = [
    "family", "magnitude", "use_inverse_aug", "mean_px", "median_px", "p95_px", "fraction_lost", "trials", "samples",
]


def family_config(family: str, magnitude: float) -> AugConfig:
    """
    Single-family pipeline. Magnitude is degrees for rotation, a probability
    for flip, the half-width around 1 for scale and the sigma in meters for
    translate.
    """
    if family == "rotation":
        return AugConfig.rotation_only(math.radians(magnitude))
    if family == "flip":
        return AugConfig.flip_only(magnitude)
    if family == "scale":
        return AugConfig.scale_only(magnitude)
    if family == "translate":
        return AugConfig.translate_only(magnitude)
    raise ValueError(f"unknown augmentation family: {family}")


def _describe(aug_cfg: AugConfig) -> tuple:
    enabled = [name for name in ("rotate", "scale", "translate", "flip") if getattr(aug_cfg, name)]
    if enabled == ["flip"]:
        return "flip", aug_cfg.flip_probability
    if enabled == ["scale"]:
        return "scale", (aug_cfg.scale_range[1] - aug_cfg.scale_range[0]) / 2
    if enabled == ["translate"]:
        return "translate", max(aug_cfg.translate_sigma)
    return "rotation", math.degrees(aug_cfg.max_rotation) if aug_cfg.rotate else 0.0


def alignment_error(
    scene: Scene,
    aug_cfg: AugConfig,
    use_inverse_aug: bool,
    trials: int,
    seed: int = 0,
    family: Optional[str] = None,
    magnitude: Optional[float] = None,
) -> AlignmentRow:
    """
    Reprojection error of augmented points, looked up through InverseAug
    (or through an identity record when use_inverse_aug is False). Trial t
    augments with seed + t. Points that project out of frame are left out
    of the error statistics and counted in fraction_lost.
    """
    if scene.correspondences is None:
        raise ValueError("alignment study needs a scene with a correspondence table")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    truth = scene.ground_truth()

    errors: List[np.ndarray] = []
    considered = 0
    lost = 0
    for trial in range(trials):
        augmented, record = apply_pipeline(scene.points, aug_cfg, seed + trial)
        gt = truth[augmented.source_index]
        has_truth = ~np.isnan(gt[:, 0])
        lookup = record if use_inverse_aug else AugRecord()
        uv, visible = project_points(inverse_aug_points(augmented.positions[has_truth], lookup), scene.camera)
        considered += int(has_truth.sum())
        lost += int((~visible).sum())
        errors.append(np.linalg.norm(uv[visible] - gt[has_truth][visible], axis=1))

    all_errors = np.concatenate(errors) if errors else np.zeros(0)
    if all_errors.size:
        mean, median, p95 = float(all_errors.mean()), float(np.median(all_errors)), float(np.percentile(all_errors, 95))
    else:
        mean = median = p95 = 0.0

    if family is None or magnitude is None:
        family, magnitude = _describe(aug_cfg)
    row = AlignmentRow(
        family=family,
        magnitude=float(magnitude),
        use_inverse_aug=use_inverse_aug,
        mean_error=mean,
        median_error=median,
        p95_error=p95,
        fraction_lost=lost / considered if considered else 0.0,
        trials=trials,
        samples=int(all_errors.size),
    )
    logger.info(
        f"Alignment {row.family}={row.magnitude:g} IA={'on' if use_inverse_aug else 'off'}: "
        f"mean {row.mean_error:.4f}px, lost {row.fraction_lost:.3f}"
    )
    return row


def family_sweep(
    scene: Scene,
    family: str,
    magnitudes: Iterable[float],
    use_inverse_aug: bool,
    trials: int,
    seed: int = 0,
) -> List[AlignmentRow]:
    return [
        alignment_error(scene, family_config(family, m), use_inverse_aug, trials, seed, family, m)
        for m in magnitudes
    ]


def flip_experiment(
    scene: Scene,
    probabilities: Sequence[float] = (0.0, 0.5, 1.0),
    use_inverse_aug: bool = False,
    trials: int = 100,
    seed: int = 0,
) -> List[AlignmentRow]:
    """Flip-only pipelines at each probability."""
    return family_sweep(scene, "flip", probabilities, use_inverse_aug, trials, seed)


def rotation_experiment(
    scene: Scene,
    rotations_deg: Sequence[float] = (0.0, 15.0, 30.0, 45.0),
    use_inverse_aug: bool = False,
    trials: int = 100,
    seed: int = 0,
) -> List[AlignmentRow]:
    return family_sweep(scene, "rotation", rotations_deg, use_inverse_aug, trials, seed)


class AlignmentStudy:
    """
    Runs the alignment-quality sweeps and writes the report.
    """

    def __init__(self, config_instance=config):
        self.config = config_instance

    def run(
        self,
        scene: Scene,
        rotations: Sequence[float] = (),
        flips: Sequence[float] = (),
        trials: int = 100,
        use_inverse_aug: bool = True,
        seed: Optional[int] = None,
        extra: Optional[dict] = None,
    ) -> AlignmentReport:
        """
        Args:
            rotations: Max rotations in degrees.
            flips: Flip probabilities.
            extra: Optional {"scale": [...], "translate": [...]} sweeps.
        """
        seed = self.config.DEFAULT_SEED if seed is None else seed
        rows = rotation_experiment(scene, rotations, use_inverse_aug, trials, seed) if rotations else []
        if flips:
            rows += flip_experiment(scene, flips, use_inverse_aug, trials, seed)
        for family, magnitudes in (extra or {}).items():
            rows += family_sweep(scene, family, magnitudes, use_inverse_aug, trials, seed)
        logger.info(f"Alignment study finished: {len(rows)} rows")
        return AlignmentReport(rows=rows)

    @staticmethod
    def write_report(report: AlignmentReport, path: str | Path):
        write_csv(path, REPORT_HEADER, (
            (r.family, r.magnitude, r.use_inverse_aug, r.mean_error, r.median_error, r.p95_error,
             r.fraction_lost, r.trials, r.samples)
            for r in report.rows
        ))
