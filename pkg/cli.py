import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from config import config, setup_logging
from fusion_system import FusionSystem
from models.fusion import Strategy
from models.scene import SceneSpec

logger = logging.getLogger(__name__)


def _floats(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _dims(text: str) -> tuple:
    try:
        dims = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected D_l,D_c,N, got '{text}'")
    if len(dims) != 3:
        raise argparse.ArgumentTypeError(f"expected three dims D_l,D_c,N, got '{text}'")
    return dims


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"fusionkit: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fusionkit", description="Lidar-camera fusion alignment toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
        return p

    p = command("gen-scene", "generate a synthetic scene bundle")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)

    p = command("run", "run a fusion strategy on a scene")
    p.add_argument("--strategy", required=True, choices=[s.value for s in Strategy])
    p.add_argument("--scene", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)

    p = command("align-study", "reprojection error versus augmentation strength")
    p.add_argument("--scene", required=True)
    p.add_argument("--rotations", type=_floats, default=[])
    p.add_argument("--flips", type=_floats, default=[])
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--no-inverse-aug", action="store_true")
    p.add_argument("--out", required=True)

    p = command("attn-dump", "dump DeepFusion attention weights per pillar")
    p.add_argument("--scene", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)

    p = command("grad-check", "finite-difference check of the LearnableAlign gradients")
    p.add_argument("--dims", type=_dims, default=(4, 3, 8))
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--embed-dim", type=int, default=8)
    p.add_argument("--mlp-dim", type=int, default=6)
    p.add_argument("--out", required=True)

    p = command("corrupt", "write a copy of a scene with laser/pixel noise")
    p.add_argument("--scene", required=True)
    p.add_argument("--laser", type=float, default=0.0)
    p.add_argument("--pixel", type=float, default=0.0)
    p.add_argument("--additive", action="store_true")
    p.add_argument("--out", required=True)
    return parser


def _dispatch(args, system) -> None:
    if args.command == "gen-scene":
        spec = SceneSpec.model_validate(json.loads(Path(args.spec).read_text()))
        system.generate_scene(spec, args.out, args.seed)
    elif args.command == "run":
        cfg = system.load_fusion_config(args.config, Strategy(args.strategy), args.seed)
        system.run(args.scene, cfg, args.out)
    elif args.command == "align-study":
        system.align_study(args.scene, args.rotations, args.flips, args.trials,
                           not args.no_inverse_aug, args.out, args.seed)
    elif args.command == "attn-dump":
        cfg = system.load_fusion_config(args.config, Strategy.DEEP, args.seed)
        system.attention_dump(args.scene, cfg, args.out)
    elif args.command == "grad-check":
        results = system.grad_check(args.dims, args.seeds, args.out, args.seed, args.eps,
                                    args.embed_dim, args.mlp_dim)
        worst = max((err for _, err in results), default=0.0)
        print(f"max relative error {worst:.3e} over {len(results)} instances")
    elif args.command == "corrupt":
        system.corrupt(args.scene, args.laser, args.pixel, args.out, args.seed, args.additive)


def _one_line(e: Exception) -> str:
    if isinstance(e, ValidationError):
        first = e.errors()[0]
        where = ".".join(str(part) for part in first["loc"])
        return f"invalid {e.title}: {where}: {first['msg']}" if where else f"invalid {e.title}: {first['msg']}"
    text = str(e).strip()
    return text.splitlines()[0] if text else type(e).__name__


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        setup_logging(config.FUSIONKIT_LOG, stream=sys.stderr)
        _dispatch(args, FusionSystem(config))
    except Exception as e:
        logger.debug("Command failed", exc_info=True)
        print(f"fusionkit: error: {_one_line(e)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
