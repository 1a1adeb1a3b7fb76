"""figviz command line: one figure family per invocation."""

from __future__ import annotations

import argparse
import sys

from .io import SchemaError, VersionError
from .render import FAMILIES, FigureSpec, load_style, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="figviz",
        description="Render figures from stored simulator CSV/JSON outputs",
    )
    parser.add_argument("family", choices=FAMILIES, help="figure family to render")
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        help="input CSV/JSON files")
    parser.add_argument("--out", required=True, help="output image path (png/svg/pdf)")
    parser.add_argument("--style", help="JSON file overriding style defaults")
    args = parser.parse_args(argv)
    try:
        style = load_style(args.style) if args.style else {}
        spec = FigureSpec(args.family, list(args.inputs), style)
        digest = render(spec, args.out)
    except (SchemaError, VersionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{args.out} data-digest {digest[:16]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
