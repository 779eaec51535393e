"""CLI: plots render <request.json>"""

import argparse
import sys

from .render import EmptyInput, FigureRequest, SchemaMismatch, render


def main(argv=None):
    parser = argparse.ArgumentParser(prog="plots")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one figure request")
    p.add_argument("request", help="JSON file: {kind, inputs, output, style}")
    args = parser.parse_args(argv)
    try:
        req = FigureRequest.from_json(args.request)
        out = render(req)
    except (SchemaMismatch, EmptyInput) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
