"""Console entry point speaking the PNG file protocol.

Usage::

    inpaint-adapter --image in.png --mask mask.png --output out.png \
        [--mode stub|identity|model] [--model PATH] [--device cpu]

Exit codes: 0 success, 1 bad inputs or arguments, 3 model unavailable.
"""

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from inpaint_adapter.fill import diffusion_fill
from inpaint_adapter.model import ModelUnavailableError, run_model

EXIT_OK = 0
EXIT_BAD_INPUT = 1
EXIT_NO_MODEL = 3

logger = logging.getLogger(__name__)


@dataclass
class AdapterConfig:
    image: Path
    mask: Path
    output: Path
    mode: str = "stub"
    model: str = ""
    device: str = "cpu"

    def validate(self) -> None:
        if not self.image.is_file():
            raise ValueError(f"image file not found: {self.image}")
        if not self.mask.is_file():
            raise ValueError(f"mask file not found: {self.mask}")
        if not self.output.parent.is_dir():
            raise ValueError(
                f"output directory does not exist: {self.output.parent}"
            )
        if self.mode == "model" and not self.model:
            raise ValueError("--mode model requires --model")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_BAD_INPUT)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="inpaint-adapter",
        description="Fill the masked region of a PNG image.",
    )
    parser.add_argument("--image", required=True, type=Path,
                        help="input RGB PNG")
    parser.add_argument("--mask", required=True, type=Path,
                        help="grayscale PNG, 255 marks pixels to fill")
    parser.add_argument("--output", required=True, type=Path,
                        help="destination PNG (same dimensions as input)")
    parser.add_argument("--mode", choices=("stub", "identity", "model"),
                        default="stub",
                        help="stub: model-free diffusion fill; identity: "
                             "copy input; model: TorchScript module")
    parser.add_argument("--model", default="",
                        help="TorchScript file for --mode model")
    parser.add_argument("--device", default="cpu",
                        help="device hint for --mode model")
    return parser


def _load_inputs(cfg: AdapterConfig):
    try:
        with Image.open(cfg.image) as img:
            image = np.asarray(img.convert("RGB"), dtype=np.uint8)
        with Image.open(cfg.mask) as img:
            mask = np.asarray(img.convert("L")) > 127
    except (UnidentifiedImageError, OSError) as exc:
        raise ValueError(f"cannot decode input: {exc}") from None
    if mask.shape != image.shape[:2]:
        raise ValueError(
            f"mask size {mask.shape} does not match image {image.shape[:2]}"
        )
    return image, mask


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    cfg = AdapterConfig(
        image=args.image,
        mask=args.mask,
        output=args.output,
        mode=args.mode,
        model=args.model,
        device=args.device,
    )
    try:
        cfg.validate()
        image, mask = _load_inputs(cfg)
    except ValueError as exc:
        print(f"inpaint-adapter: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT

    if cfg.mode == "identity":
        result = image
    elif cfg.mode == "stub":
        result = diffusion_fill(image, mask)
    else:
        try:
            result = run_model(image, mask, cfg.model, cfg.device)
        except ModelUnavailableError as exc:
            print(f"inpaint-adapter: {exc}", file=sys.stderr)
            return EXIT_NO_MODEL

    Image.fromarray(result, mode="RGB").save(cfg.output, format="PNG")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
