#!/usr/bin/env python3
"""Inference throughput of the named transformer shapes on one dataset.

Times each model with the fixed protocol (four repeats per batch, median,
mean over randomly selected batches) and prints flows/second next to the
parameter count.  Deep presets keep their 12-layer, 12-head shape; pass
--full-scale to time them at d_model 768 (slow on CPU).

Usage:
    python3 scripts/bench_presets.py [--rows 4200] [--batch-size 64]
"""

from __future__ import annotations

import argparse

from flowformer import synthdata
from flowformer.encoders import EncoderSpec, EncodingKind
from flowformer.heads import HeadKind, HeadSpec
from flowformer.ingest import split, windows
from flowformer.preprocess import fit, transform
from flowformer.trainer import ModelConfig, build_model, measure_inference_throughput
from flowformer.transformer import basic_decoder, basic_encoder, bert_shaped, gpt_shaped


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=4200)
    parser.add_argument("--batch-size", type=int, default=64, dest="batch_size")
    parser.add_argument("--window", type=int, default=8)
    parser.add_argument("--full-scale", action="store_true", dest="full_scale")
    args = parser.parse_args()

    spec, table = synthdata.generate(
        synthdata.SyntheticTask.NOISE, rows=args.rows, shape=synthdata.COMPACT_SHAPE, seed=8
    )
    train_part, _ = split(table)
    state = fit(train_part, spec, level_budget=8)
    window_set = windows(transform(train_part, state), train_part.row_labels(), args.window)

    deep_width = 768 if args.full_scale else 192
    shapes = [
        ("basic_encoder", basic_encoder(), 64),
        ("basic_decoder", basic_decoder(), 64),
        ("gpt_shaped", gpt_shaped(d_model=deep_width), deep_width),
        ("bert_shaped", bert_shaped(d_model=deep_width), deep_width),
    ]
    print(f"{'model':<14} {'params':>12} {'flows/sec':>12} {'batches':>8}")
    for name, t_cfg, d_model in shapes:
        cfg = ModelConfig(
            encoder=EncoderSpec(EncodingKind.RECORD_PROJECTION, d_model=d_model),
            transformer=t_cfg,
            head=HeadSpec(HeadKind.LAST_TOKEN),
            window=args.window,
            learning_rate=0.001,
            batch_size=args.batch_size,
        )
        model = build_model(cfg, state)
        result = measure_inference_throughput(model, window_set, sample_batches=50, repeats=4, seed=1)
        print(
            f"{name:<14} {model.count_parameters():>12,} "
            f"{result.flows_per_sec:>12,.0f} {result.batches_timed:>8}"
        )


if __name__ == "__main__":
    main()
