"""Command-line interface: ``bsc <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bbc, ibc
from .errors import DataError, NumericalError
from .formats import (
    atomic_write,
    format_run,
    load_index,
    load_manifest,
    load_matrix,
    load_model,
    load_run,
    load_subspaces,
    model_kind,
    read_id_list,
    save_index,
    save_model,
    save_run,
    save_subspaces,
    write_id_list,
)
from .hamming import BinaryIndex, search
from .metrics import GroundTruth, evaluate
from .subspace import DegenerateSubspaceError, exact_search, lift_query, make_entry
from .synth import synth

log = logging.getLogger("bsc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonneg_float(text):
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bsc", description="Binary subspace coding for image-to-video retrieval.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON file with option defaults; flags take precedence")
        return p

    p = add("synth", "generate a clustered synthetic dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--clusters", type=_positive_int, default=10)
    p.add_argument("--videos-per-cluster", type=_positive_int, default=20)
    p.add_argument("--frames", type=_positive_int, default=20, help="frames per video")
    p.add_argument("--images-per-video", type=_positive_int, default=1)
    p.add_argument("--dim", type=_positive_int, default=32)
    p.add_argument("--subspace-dim", type=_positive_int, default=4)
    p.add_argument("--noise", type=_nonneg_float, default=0.1)
    p.add_argument("--no-normalize", action="store_true", help="keep raw frame norms")
    p.add_argument("--queries", type=_positive_int, help="number of images listed in queries.txt (default all)")
    p.add_argument("--seed", type=int, default=0)

    p = add("build", "build subspace representations from a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--rel-tol", type=float, default=1e-6)
    p.add_argument("--rank", type=_positive_int, help="keep at most this many basis directions")

    def training_flags(p):
        p.add_argument("--manifest", type=Path, required=True)
        p.add_argument("--subspaces", type=Path, required=True)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--samples-per-video", type=_positive_int, default=4, help="training frames drawn per video")
        p.add_argument("--seed", type=int, default=0)

    p = add("train-ibc", "train an inner-product binary coding model")
    training_flags(p)
    p.add_argument("--bits", type=_positive_int, default=64)
    p.add_argument("--lambda", dest="lam", type=float, default=100.0)
    p.add_argument("--iters", type=_positive_int, default=2, help="local B/P passes per side")
    p.add_argument("--outer-iters", type=_positive_int, default=10)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--top-m", type=_positive_int, help="binarise correlation columns to their m largest entries (default n/10)")
    mode.add_argument("--raw-correlation", action="store_true", help="use U'V without binarisation")

    p = add("train-bbc", "train a bilinear binary coding model")
    training_flags(p)
    p.add_argument("--bits", type=_positive_int, help="square code shape, c1 = c2 = sqrt(bits)")
    p.add_argument("--c1", type=_positive_int)
    p.add_argument("--c2", type=_positive_int)
    p.add_argument("--mu", type=_nonneg_float, default=1.0)
    p.add_argument("--iters", type=_positive_int, default=10, help="maximum sweeps")
    p.add_argument("--delta", choices=("category", "source"), default="category")

    p = add("encode", "encode video subspaces into a binary index")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--subspaces", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = add("query", "rank videos for image queries")
    backend = p.add_mutually_exclusive_group(required=True)
    backend.add_argument("--exact", action="store_true", help="exact inner-product search over subspaces")
    backend.add_argument("--model", type=Path, help="hash model (requires --index)")
    p.add_argument("--subspaces", type=Path)
    p.add_argument("--index", type=Path)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--vector", type=Path, help="a single query vector file")
    source.add_argument("--manifest", type=Path, help="query the manifest images")
    p.add_argument("--queries", type=Path, help="restrict to the image ids listed in this file")
    p.add_argument("--k", type=_positive_int, help="results per query (default all)")
    p.add_argument("--out", type=Path, help="run file (default stdout)")

    p = add("eval", "score a run file against manifest categories")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--queries", type=Path, help="queries the run must cover (default every manifest image)")
    p.add_argument("--k", type=_positive_int, default=500)
    p.add_argument("--out", type=Path, help="per-query table file")
    return parser


def _config_path(argv) -> Path | None:
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return Path(argv[i + 1])
        if token.startswith("--config="):
            return Path(token.split("=", 1)[1])
    return None


def parse_args(argv) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` sit between flags and built-in defaults."""
    argv = list(argv)
    parser = build_parser()
    path = _config_path(argv)
    command = next((t for t in argv if t in COMMANDS), None)
    if path is not None and command is not None:
        try:
            config = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            parser.exit(EXIT_USAGE, f"bsc: error: cannot read config {path}: {exc}\n")
        if not isinstance(config, dict):
            parser.exit(EXIT_USAGE, f"bsc: error: config {path} must hold a JSON object\n")
        if isinstance(config.get(command), dict):
            config = config[command]
        subparser = parser._subparsers._group_actions[0].choices[command]
        names = {}
        for action in subparser._actions:
            if action.dest in ("help", "config"):
                continue
            names[action.dest] = action.dest
            for opt in action.option_strings:
                names[opt.lstrip("-").replace("-", "_")] = action.dest
        raw = {key.replace("-", "_"): value for key, value in config.items() if not isinstance(value, dict)}
        unknown = sorted(key for key in raw if key not in names)
        config = {names[key]: value for key, value in raw.items() if key in names}
        if unknown:
            parser.exit(EXIT_USAGE, f"bsc: error: unknown option(s) in {path}: {', '.join(unknown)}\n")
        for action in subparser._actions:
            if action.dest in config:
                action.required = False
                if action.type is not None and isinstance(config[action.dest], str):
                    config[action.dest] = action.type(config[action.dest])
        subparser.set_defaults(**config)
    return parser.parse_args(argv)


# ---------- helpers ----------


def _subspaces_for(manifest, entries):
    by_id = {e.video_id: e for e in entries}
    missing = [v.video_id for v in manifest.videos if v.video_id not in by_id]
    if missing:
        raise DataError("subspace store lacks videos: " + ", ".join(missing))
    return [by_id[v.video_id] for v in manifest.videos]


def _training_images(manifest, samples_per_video, seed):
    """Frames sampled from each video; returns vectors (n, d), categories and source ids."""
    rng = np.random.default_rng(seed)
    vectors, cats, sources = [], [], []
    for video in manifest.videos:
        frames = load_matrix(video.path)
        take = min(samples_per_video, frames.shape[1])
        for col in np.sort(rng.choice(frames.shape[1], size=take, replace=False)):
            vectors.append(frames[:, col])
            cats.append(video.category)
            sources.append(video.video_id)
    return np.array(vectors), cats, sources


def _load_training(args):
    manifest = load_manifest(args.manifest)
    if not manifest.videos:
        raise DataError(f"{args.manifest}: no videos listed")
    entries = _subspaces_for(manifest, load_subspaces(args.subspaces))
    images, cats, sources = _training_images(manifest, args.samples_per_video, args.seed)
    if images.shape[1] != entries[0].dim:
        raise DataError(f"frame dimension {images.shape[1]} differs from subspace dimension {entries[0].dim}")
    return manifest, entries, images, cats, sources


def _query_vectors(args):
    if args.vector is not None:
        vec = load_matrix(args.vector)
        if vec.shape[1] != 1:
            raise DataError(f"{args.vector}: expected a single column vector, got {vec.shape}")
        return [(args.vector.stem, vec[:, 0])]
    manifest = load_manifest(args.manifest)
    images = list(manifest.images)
    if args.queries is not None:
        wanted = read_id_list(args.queries)
        by_id = {im.image_id: im for im in images}
        missing = [q for q in wanted if q not in by_id]
        if missing:
            raise DataError(f"{args.queries}: ids not in manifest: " + ", ".join(missing))
        images = [by_id[q] for q in wanted]
    out = []
    for im in images:
        vec = load_matrix(im.path)
        if vec.shape[1] != 1:
            raise DataError(f"{im.path}: expected a single column vector, got {vec.shape}")
        out.append((im.image_id, vec[:, 0]))
    return out


# ---------- commands ----------


def cmd_synth(args):
    if args.subspace_dim >= args.dim:
        raise UsageError(f"--subspace-dim ({args.subspace_dim}) must be smaller than --dim ({args.dim})")
    manifest_path = synth(
        args.out,
        clusters=args.clusters,
        videos_per_cluster=args.videos_per_cluster,
        frames_per_video=args.frames,
        d=args.dim,
        subspace_dim=args.subspace_dim,
        noise=args.noise,
        seed=args.seed,
        images_per_video=args.images_per_video,
        normalize=not args.no_normalize,
    )
    ids = [im.image_id for im in load_manifest(manifest_path).images]
    if args.queries is not None:
        if args.queries > len(ids):
            raise UsageError(f"--queries {args.queries} exceeds the {len(ids)} generated images")
        picks = np.random.default_rng([args.seed, 1]).choice(len(ids), size=args.queries, replace=False)
        ids = [ids[i] for i in sorted(picks)]
    write_id_list(args.out / "queries.txt", ids)
    print(f"manifest={manifest_path}")
    print(f"queries={args.out / 'queries.txt'}")


def cmd_build(args):
    manifest = load_manifest(args.manifest)
    if not manifest.videos:
        raise DataError(f"{args.manifest}: no videos listed")
    if not 0 < args.rel_tol < 1:
        raise UsageError(f"--rel-tol must lie in (0, 1), got {args.rel_tol}")
    entries = []
    for video in manifest.videos:
        try:
            entries.append(make_entry(video.video_id, load_matrix(video.path), rel_tol=args.rel_tol, rank=args.rank))
        except DegenerateSubspaceError as exc:
            raise DataError(f"{video.path}: {exc}") from exc
    listing = save_subspaces(args.out, entries)
    print(f"subspaces={listing}")
    print(f"videos={len(entries)}")


def cmd_train_ibc(args):
    _, entries, images, _, _ = _load_training(args)
    U, V = ibc.build_training(entries, list(images))
    n = U.shape[1]
    if args.raw_correlation:
        A, top_m = ibc.correlation(U, V, "raw"), None
    else:
        top_m = args.top_m if args.top_m is not None else max(1, n // 10)
        if top_m > n:
            raise UsageError(f"--top-m {top_m} exceeds the {n} training images")
        A = ibc.correlation(U, V, "top_m", top_m)
    model = ibc.train_ibc(
        ibc.IbcTrainingSet(U, V, A),
        r=args.bits,
        lam=args.lam,
        outer_iters=args.outer_iters,
        inner_iters=args.iters,
        seed=args.seed,
    )
    params = dict(model.params, samples_per_video=args.samples_per_video, top_m=top_m)
    model = ibc.IbcModel(model.P, model.Q, model.d, model.lam, params)
    save_model(args.out, model)
    print(f"model={args.out}")
    print(f"kind=IBC bits={model.r} images={n} videos={V.shape[1]}")


def cmd_train_bbc(args):
    if args.bits is not None:
        if args.c1 is not None or args.c2 is not None:
            raise UsageError("--bits cannot be combined with --c1/--c2")
        side = int(round(np.sqrt(args.bits)))
        if side * side != args.bits:
            raise UsageError(f"--bits {args.bits} is not a perfect square; give --c1 and --c2")
        c1 = c2 = side
    elif args.c1 is not None and args.c2 is not None:
        c1, c2 = args.c1, args.c2
    else:
        raise UsageError("give either --bits or both --c1 and --c2")
    manifest, entries, images, cats, sources = _load_training(args)
    d = entries[0].dim
    if c1 > d or c2 > d:
        raise UsageError(f"code shape {c1}x{c2} exceeds the feature dimension {d}")
    if args.delta == "category":
        delta = bbc.build_delta(cats, [v.category for v in manifest.videos])
    else:
        delta = bbc.build_delta(sources, [v.video_id for v in manifest.videos])
    projectors = np.stack([e.projector for e in entries])
    train = bbc.BbcTrainingSet.from_data(projectors, images, delta)
    model = bbc.train_bbc(train, c1, c2, mu=args.mu, iters=args.iters, seed=args.seed)
    params = dict(model.params, samples_per_video=args.samples_per_video, delta=args.delta)
    model = bbc.BbcModel(model.P1, model.P2, model.Q1, model.Q2, model.mu, model.center_V, model.center_U, params)
    save_model(args.out, model)
    print(f"model={args.out}")
    print(f"kind=BBC bits={model.r} c1={c1} c2={c2} sweeps={params['sweeps']}")


def encode_videos(model, projectors) -> np.ndarray:
    if model_kind(model) == "IBC":
        return ibc.encode_videos_ibc(model, projectors)
    return bbc.flatten_codes(bbc.encode_videos_bbc(model, projectors))


def encode_images(model, queries) -> np.ndarray:
    if model_kind(model) == "IBC":
        return ibc.encode_images_ibc(model, queries)
    return bbc.flatten_codes(bbc.encode_images_bbc(model, queries))


def cmd_encode(args):
    model = load_model(args.model)
    entries = load_subspaces(args.subspaces)
    if entries[0].dim != model.d:
        raise DataError(f"subspace dimension {entries[0].dim} does not match model dimension {model.d}")
    codes = encode_videos(model, np.stack([e.projector for e in entries]))
    index = BinaryIndex.from_codes([e.video_id for e in entries], codes)
    kind = model_kind(model)
    c1, c2 = (model.c1, model.c2) if kind == "BBC" else (0, 0)
    save_index(args.out, index, kind=kind, d=model.d, c1=c1, c2=c2)
    print(f"index={args.out}")
    print(f"videos={len(index)} bits={index.r}")


def cmd_query(args):
    queries = _query_vectors(args)
    run = {}
    if args.exact:
        if args.subspaces is None:
            raise UsageError("--exact requires --subspaces")
        if args.index is not None:
            raise UsageError("--index is only valid with --model")
        entries = load_subspaces(args.subspaces)
        if args.k is not None and args.k > len(entries):
            raise UsageError(f"--k {args.k} exceeds the {len(entries)} indexed videos")
        for qid, vec in queries:
            if vec.size != entries[0].dim:
                raise DataError(f"query {qid} has dimension {vec.size}, subspaces have {entries[0].dim}")
            run[qid] = exact_search(lift_query(vec, qid), entries, args.k)
    else:
        if args.index is None:
            raise UsageError("--model requires --index")
        if args.subspaces is not None:
            raise UsageError("--subspaces is only valid with --exact")
        model = load_model(args.model)
        index, meta = load_index(args.index)
        if meta["kind"] != model_kind(model) or index.r != model.r:
            raise DataError(f"{args.index} ({meta['kind']}, {index.r} bits) was not built with a model like {args.model}")
        if args.k is not None and args.k > len(index):
            raise UsageError(f"--k {args.k} exceeds the {len(index)} indexed videos")
        vectors = np.array([vec for _, vec in queries])
        if vectors.shape[1] != model.d:
            raise DataError(f"query dimension {vectors.shape[1]} does not match model dimension {model.d}")
        codes = encode_images(model, vectors)
        for (qid, _), code in zip(queries, codes):
            run[qid] = search(index, code, args.k)
    if args.out is not None:
        save_run(args.out, run)
        print(f"run={args.out}")
    else:
        sys.stdout.write(format_run(run))


def cmd_eval(args):
    manifest = load_manifest(args.manifest)
    run = load_run(args.run)
    expected = read_id_list(args.queries) if args.queries is not None else [im.image_id for im in manifest.images]
    missing = [q for q in expected if q not in run]
    if missing:
        raise DataError(f"{args.run}: missing queries: " + ", ".join(missing))
    truth = GroundTruth(manifest.image_categories(), manifest.video_categories())
    report = evaluate({q: run[q] for q in expected}, truth, args.k)
    sys.stdout.write(report.to_text())
    if args.out is not None:
        atomic_write(args.out, report.to_table())


COMMANDS = {
    "synth": cmd_synth,
    "build": cmd_build,
    "train-ibc": cmd_train_ibc,
    "train-bbc": cmd_train_bbc,
    "encode": cmd_encode,
    "query": cmd_query,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"bsc {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"bsc {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        print(f"bsc {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
