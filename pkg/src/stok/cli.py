"""Command-line surface: pack, unpack, stats, bench, dump-batch, gen-synthetic.

All output meant for machines is line-delimited key=value. Exit codes
map error families: 2 input, 3 format, 4 truncation, 5 corruption,
6 config, 7 I/O.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import archive as arch
from . import augment
from .errors import EXIT_CODES, InputError, StokError
from .pipeline import PipelineConfig, TokenPipeline


def _print_kv(pairs) -> None:
    for key, value in pairs:
        if isinstance(value, float):
            print(f"{key}={value:.6f}")
        else:
            print(f"{key}={value}")


def cmd_pack(args) -> int:
    grids, vocab = arch.read_raw_tokens(args.tokens)
    cb = arch.read_codebook_file(args.codebook)
    if cb.size != vocab:
        raise InputError(f"codebook has V={cb.size} but token file declares V={vocab}")
    labels = arch.read_labels_file(args.labels) if args.labels else None
    if labels is not None and labels.shape[0] != grids.shape[0]:
        raise InputError(f"{labels.shape[0]} labels for {grids.shape[0]} records")
    arch.write_archive(
        grids,
        cb,
        labels,
        out=args.out,
        use_huffman=not args.no_huffman,
        remap=not args.no_remap,
    )
    report = arch.open_archive(args.out).stats()
    _print_kv(report.as_dict().items())
    return 0


def cmd_unpack(args) -> int:
    with arch.open_archive(args.archive) as a:
        n = len(a)
        side = a.header.grid_side
        grids = np.empty((n, side, side), dtype=np.int32)
        for i in range(n):
            grids[i], _ = a.read_image(i, original=True)
        arch.write_raw_tokens(args.out, grids, a.header.vocab)
        if args.labels_out:
            if a.labels is None:
                raise InputError("archive has no labels to unpack")
            arch.write_labels_file(args.labels_out, a.labels)
        if args.codebook_out:
            arch.write_codebook_file(args.codebook_out, a.codebook)
    _print_kv([("n_records", n), ("grid_side", side)])
    return 0


def cmd_stats(args) -> int:
    with arch.open_archive(args.archive) as a:
        report = a.stats()
    _print_kv(report.as_dict().items())
    return 0


def cmd_bench(args) -> int:
    with arch.open_archive(args.archive) as a:
        n = len(a)
        if n == 0:
            _print_kv([("n_records", 0)])
            return 0
        seq = min(args.records, n)
        t0 = time.perf_counter()
        for i in range(seq):
            a.read_image(i)
        sequential = time.perf_counter() - t0

        rng = np.random.default_rng(args.seed)
        picks = rng.integers(0, n, size=min(args.records, n))
        t0 = time.perf_counter()
        for i in picks:
            a.read_image(int(i))
        random_access = time.perf_counter() - t0
    _print_kv(
        [
            ("n_records", n),
            ("decode_s_per_100", 100.0 * sequential / seq),
            ("random_read_s_per_100", 100.0 * random_access / len(picks)),
            ("tokens_per_s", seq * a.header.grid_side**2 / sequential if sequential > 0 else 0.0),
        ]
    )
    return 0


def cmd_dump_batch(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with arch.open_archive(args.archive) as a:
        aug = augment.AugmentConfig(m=args.m, seed=args.seed)
        config = PipelineConfig(
            augment=aug,
            batch_size=args.batch_size,
            epochs=args.epoch + 1,
            mode=args.mode,
            seed=args.seed,
            workers=args.workers,
        )
        pipe = TokenPipeline(a, config)
        pipe.seek(args.epoch, args.batch)
        written = []
        for _ in range(args.count):
            try:
                batch = pipe.next_batch()
            except StopIteration:
                break
            tensor_path = out_dir / f"batch_{batch.epoch}_{batch.index}.f32"
            augment.write_f32_tensor(tensor_path, batch.tensors)
            written.append(tensor_path.name)
            if batch.labels is not None:
                label_path = out_dir / f"labels_{batch.epoch}_{batch.index}.f32"
                b, c = batch.labels.shape
                augment.write_f32_tensor(label_path, batch.labels.reshape(b, c, 1, 1))
                written.append(label_path.name)
        _print_kv(
            [
                ("batches_per_epoch", pipe.batches_per_epoch),
                ("n_files", len(written)),
                ("files", ",".join(written)),
            ]
        )
    return 0


def cmd_gen_synthetic(args) -> int:
    rng = np.random.default_rng(args.seed)
    shape = (args.n_images, args.n, args.n)
    if args.dist == "uniform":
        grids = rng.integers(0, args.v, size=shape)
    else:
        weights = 1.0 / np.arange(1, args.v + 1, dtype=np.float64) ** args.s
        weights /= weights.sum()
        draws = rng.choice(args.v, size=args.n_images * args.n * args.n, p=weights)
        # Scramble value identities so popularity order differs from index order.
        scramble = rng.permutation(args.v)
        grids = scramble[draws].reshape(shape)
    arch.write_raw_tokens(args.out, grids, args.v)
    if args.labels_out:
        arch.write_labels_file(args.labels_out, rng.integers(0, args.classes, size=args.n_images))
    if args.codebook_out:
        from .codebook import Codebook

        vecs = rng.normal(0.0, 1.0, size=(args.d_c, args.v)).astype(np.float32)
        arch.write_codebook_file(args.codebook_out, Codebook(vectors=vecs))
    _print_kv(
        [
            ("n_images", args.n_images),
            ("grid_side", args.n),
            ("vocab", args.v),
            ("dist", args.dist),
            ("seed", args.seed),
        ]
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stok", description="Token-grid archive toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pack", help="pack a raw token file into an archive")
    p.add_argument("--tokens", required=True, help="raw token file (u64 N | u32 n | u32 V | u16 tokens)")
    p.add_argument("--codebook", required=True, help="codebook file (u32 d_c | u32 V | f32 vectors)")
    p.add_argument("--labels", help="optional labels file (bare u16 array)")
    p.add_argument("--out", required=True, help="archive path to write")
    p.add_argument("--no-huffman", action="store_true", help="store escape bytes without entropy coding")
    p.add_argument("--no-remap", action="store_true", help="skip popularity remapping")
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("unpack", help="expand an archive back to the raw token file")
    p.add_argument("--archive", required=True)
    p.add_argument("--out", required=True, help="raw token file to write")
    p.add_argument("--labels-out", help="also write the labels file")
    p.add_argument("--codebook-out", help="also write the embedded codebook")
    p.set_defaults(func=cmd_unpack)

    p = sub.add_parser("stats", help="print storage accounting for an archive")
    p.add_argument("--archive", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("bench", help="time sequential and random record decodes")
    p.add_argument("--archive", required=True)
    p.add_argument("--records", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("dump-batch", help="write golden tensors for pipeline batches")
    p.add_argument("--archive", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--batch", type=int, default=0, help="first batch index to dump")
    p.add_argument("--count", type=int, default=1, help="number of consecutive batches")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--mode", choices=["train", "eval"], default="train")
    p.add_argument("--m", type=int, default=28)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_dump_batch)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic token corpus")
    p.add_argument("--out", required=True, help="raw token file to write")
    p.add_argument("--n-images", type=int, required=True)
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--v", type=int, default=391)
    p.add_argument("--d-c", type=int, default=32)
    p.add_argument("--dist", choices=["uniform", "zipf"], default="uniform")
    p.add_argument("--s", type=float, default=1.0, help="Zipf exponent")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=1000)
    p.add_argument("--labels-out")
    p.add_argument("--codebook-out")
    p.set_defaults(func=cmd_gen_synthetic)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StokError as e:
        print(f"error[{e.category}]: {e}", file=sys.stderr)
        return EXIT_CODES.get(e.category, 1)
    except OSError as e:
        print(f"error[io]: {e}", file=sys.stderr)
        return EXIT_CODES["io"]


if __name__ == "__main__":
    sys.exit(main())
