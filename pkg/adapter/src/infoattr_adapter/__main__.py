"""Command-line entry: serve a model on stdio.

  python -m infoattr_adapter --model lin.json
  python -m infoattr_adapter --plugin mypkg.mymodel:predict \
      --shape 28,28,1 --num-classes 10 [--labels cat,dog,...]
"""

import argparse
import sys

from . import load_linear_config, load_plugin_config, serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="infoattr-adapter")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--model", help="linear-model JSON file (infoattr-linear-v1)")
    source.add_argument("--plugin", help="module:function predicting probability rows")
    parser.add_argument("--shape", help="H,W,C (required with --plugin)")
    parser.add_argument("--num-classes", type=int, help="required with --plugin")
    parser.add_argument("--labels", help="optional comma-separated class labels")
    args = parser.parse_args(argv)

    labels = args.labels.split(",") if args.labels else None
    try:
        if args.model:
            config = load_linear_config(args.model)
        else:
            if not args.shape or not args.num_classes:
                parser.error("--plugin requires --shape and --num-classes")
            shape = tuple(int(v) for v in args.shape.split(","))
            config = load_plugin_config(args.plugin, shape, args.num_classes, labels)
    except (OSError, ValueError, ImportError, AttributeError) as e:
        print(f"infoattr-adapter: {e}", file=sys.stderr)
        return 1
    serve(config)
    return 0


if __name__ == "__main__":
    sys.exit(main())
