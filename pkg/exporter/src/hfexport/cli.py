"""Standalone export script: pretrained checkpoints to padt bundles."""

from __future__ import annotations

import argparse
import sys

from .export import ExportSpec, export_pair, export_speech, export_text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hf-export",
        description="dump hidden states and attention maps to tensor bundles")
    sub = parser.add_subparsers(dest="command", required=True)

    p_text = sub.add_parser("text", help="export a text checkpoint on a sentence")
    p_text.add_argument("--model", required=True)
    p_text.add_argument("--text", required=True)
    p_text.add_argument("--layers", default="all")
    p_text.add_argument("--out", required=True)

    p_speech = sub.add_parser("speech", help="export a speech checkpoint on a wav file")
    p_speech.add_argument("--model", required=True)
    p_speech.add_argument("--audio", required=True)
    p_speech.add_argument("--layers", default="all")
    p_speech.add_argument("--out", required=True)

    p_pair = sub.add_parser("pair", help="export matched text and speech bundles")
    p_pair.add_argument("--text-model", required=True)
    p_pair.add_argument("--speech-model", required=True)
    p_pair.add_argument("--text", required=True)
    p_pair.add_argument("--audio", required=True)
    p_pair.add_argument("--layers", default="all")
    p_pair.add_argument("--out-text", required=True)
    p_pair.add_argument("--out-speech", required=True)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "text":
            path = export_text(ExportSpec(args.model, "text", args.text,
                                          args.layers, args.out))
            print(f"wrote text bundle to {path}")
        elif args.command == "speech":
            path = export_speech(ExportSpec(args.model, "speech", args.audio,
                                            args.layers, args.out))
            print(f"wrote speech bundle to {path}")
        else:
            t_path, s_path = export_pair(
                ExportSpec(args.text_model, "text", args.text,
                           args.layers, args.out_text),
                ExportSpec(args.speech_model, "speech", args.audio,
                           args.layers, args.out_speech))
            print(f"wrote text bundle to {t_path}")
            print(f"wrote speech bundle to {s_path}")
    except Exception as err:  # resolution, decode, and I/O failures alike
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
