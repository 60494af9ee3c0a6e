"""Command line front end: shiftid-extract IMAGE_DIR --out PREFIX [...]."""

import argparse
import logging
import sys

from .encoders import list_encoders
from .errors import ExtractorError
from .extract import ExtractJob, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftid-extract",
        description="Embed an image folder and write shift-analysis tables",
    )
    parser.add_argument("image_dir", help="folder of images to embed")
    parser.add_argument("--out", required=True, metavar="PREFIX",
                        help="output path prefix for the written files")
    parser.add_argument("--encoder", default="resnet50_supervised",
                        help="encoder id; one of: " + ", ".join(list_encoders()))
    parser.add_argument("--task-model", default=None, metavar="PATH",
                        help="optional TorchScript classifier applied to the "
                             "preprocessed image batch; its softmax rows are "
                             "written alongside the features")
    parser.add_argument("--batch-size", type=int, default=32)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        job = ExtractJob(
            image_dir=args.image_dir,
            encoder_id=args.encoder,
            output_prefix=args.out,
            task_model_path=args.task_model,
            batch_size=args.batch_size,
        )
        paths = extract(job)
    except ExtractorError as exc:
        logging.getLogger("shiftid_extractor").error("%s", exc)
        return 2
    for kind in ("features", "outputs", "manifest"):
        if kind in paths:
            print(f"{kind}: {paths[kind]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
