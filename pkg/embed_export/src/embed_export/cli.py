"""CLI: export benchmark datasets, generate phrase-distortion pseudo-OOD."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from embed_export.datasets import DatasetFormatError
from embed_export.encoders import make_encoder
from embed_export.export import ExportConfig, export, write_jsonl
from embed_export.pd import PdConfig, gen_pd_text, hf_mask_filler, read_texts_jsonl


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embed-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="encode a benchmark into JSONL + manifest")
    p.add_argument("--dataset", required=True,
                   help="clinc150 | stackoverflow | banking | custom dataset name")
    p.add_argument("--data-dir", required=True, help="directory with the published files")
    p.add_argument("--format", choices=["auto", "clinc", "tsv"], default="auto",
                   help="source layout; auto infers it from the dataset name")
    p.add_argument("--encoder", default="hf:bert-base-uncased",
                   help="hf:<model-id> or hash:<dim>")
    p.add_argument("--device", default="cpu", help="inference device for hf encoders")
    p.add_argument("--batch-size", type=int, default=32, help="encoding batch size")
    p.add_argument("-o", "--out", required=True, help="output dataset directory")

    p = sub.add_parser("gen-pd", help="distort utterances with a masked LM and encode them")
    p.add_argument("--in", dest="input", required=True, help="exported JSONL with text fields")
    p.add_argument("--n", type=int, required=True, help="number of samples to produce")
    p.add_argument("--rate", type=float, default=0.15, help="fraction of tokens in the masked span")
    p.add_argument("--mask-model", default="bert-base-uncased", help="fill-mask model id")
    p.add_argument("--min-score", type=float, default=None,
                   help="optional fill-quality threshold; weaker fills are skipped")
    p.add_argument("--encoder", default="hf:bert-base-uncased",
                   help="hf:<model-id> or hash:<dim>")
    p.add_argument("--device", default="cpu", help="inference device")
    p.add_argument("--seed", type=int, required=True, help="random seed")
    p.add_argument("-o", "--out", required=True, help="output JSONL path")

    return parser


def cmd_export(args) -> int:
    manifest = export(
        ExportConfig(
            dataset=args.dataset,
            data_dir=args.data_dir,
            out_dir=args.out,
            encoder=args.encoder,
            format=args.format,
            device=args.device,
            batch_size=args.batch_size,
        )
    )
    print(f"[embed-export] {args.dataset}: counts={manifest['counts']} "
          f"dim={manifest['feature_dim']} -> {args.out}")
    return 0


def cmd_gen_pd(args) -> int:
    texts = read_texts_jsonl(args.input)
    encoder = make_encoder(args.encoder, device=args.device)
    config = PdConfig(
        n=args.n, replacement_rate=args.rate, seed=args.seed,
        mask_model=args.mask_model, min_score=args.min_score,
    )
    result = gen_pd_text(texts, config, hf_mask_filler(args.mask_model, args.device), encoder)
    write_jsonl(Path(args.out), result.rows)
    print(f"[embed-export] gen-pd: wrote {len(result.rows)} samples "
          f"(skipped {result.skipped}) -> {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            return cmd_export(args)
        return cmd_gen_pd(args)
    except (DatasetFormatError, ValueError, RuntimeError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
