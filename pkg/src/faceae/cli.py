"""Command-line entry point: ``faceae <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import DataError, FaceError, NumericalError

log = logging.getLogger("faceae")

LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
ORDERS = ("zyx", "zyx-component", "dfs", "bfs")


class UsageError(FaceError):
    exit_code = 1


class HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults, except for required flags and ones whose help explains an unset default."""

    def _get_help_string(self, action):
        if action.required or action.default is None:
            return action.help
        return super()._get_help_string(action)


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _mesh_files(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{d}: not a directory")
    files = sorted(d.glob("*.obj"))
    if not files:
        raise DataError(f"{d}: no .obj files")
    return files


def _load_config(path: str | None):
    from .config import RunConfig, parse_config

    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _parent(path: str | Path) -> Path:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return Path(path)


def _write_text(path: str | Path, text: str) -> None:
    _parent(path).write_text(text)


# -- commands -----------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .mesh_io import write_obj_file
    from .synthetic import gen_synthetic, load_spec_file, overfit_corpus, spec_to_dict

    if args.preset is not None:
        specs = [s for s, _ in overfit_corpus(args.count, 0 if args.seed is None else args.seed)]
    else:
        specs = load_spec_file(args.spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for i, spec in enumerate(specs):
        mesh = gen_synthetic(spec)
        name = f"mesh_{i:04d}_{spec.kind}.obj"
        write_obj_file(mesh, out / name)
        manifest.append({"file": name, "faces": mesh.n_faces, "vertices": mesh.n_vertices,
                         "spec": spec_to_dict(spec)})
    _write_text(out / "manifest.json", json.dumps({"meshes": manifest}, indent=2) + "\n")
    print(f"wrote {len(manifest)} meshes to {out}")
    return 0


def cmd_prep(args) -> int:
    from .mesh_io import read_obj_file
    from .mesh_prep import order_faces, prepare
    from .tokenizer import compression_ratio_exact, encode, save

    qm = prepare(read_obj_file(args.input), args.resolution)
    if qm.n_faces == 0:
        raise DataError(f"{args.input}: no faces left after quantization")
    tokens = encode(order_faces(qm, args.order))
    save(tokens, _parent(args.out))
    n = tokens.n_faces
    with_eos = compression_ratio_exact(n, include_eos=True)
    no_eos = compression_ratio_exact(n, include_eos=False)
    print(f"faces={n}")
    print(f"tokens={len(tokens.tokens)}")
    print(f"baseline_tokens={9 * n}")
    print(f"ratio={float(with_eos):.6f} ({with_eos})")
    print(f"ratio_without_eos={float(no_eos):.6f} ({no_eos})")
    print(f"dropped_faces={qm.dropped_faces}")
    return 0


def cmd_stats(args) -> int:
    from .mesh_io import read_obj_file
    from .metrics import compression_report, format_rows_csv, format_rows_text
    from .plotting import figure_path, plot_compression

    meshes = [(f.name, read_obj_file(f)) for f in _mesh_files(args.input)]
    rows = compression_report(meshes, args.resolution)
    print(format_rows_text(rows), end="")
    if args.csv:
        _write_text(args.csv, format_rows_csv(rows))
        png = plot_compression(rows, figure_path(args.csv))
        print(f"wrote {args.csv} and {png}")
    return 0


def cmd_train(args) -> int:
    from .config import replace
    from .mesh_io import read_obj_file
    from .pipeline import train
    from .plotting import plot_loss_curve

    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, train={"seed": args.seed})
    meshes = [read_obj_file(f) for f in _mesh_files(args.data)]
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.csv")
    res = train(meshes, cfg, out=out, log_path=log_path, resume=args.resume, threads=args.threads)
    png = plot_loss_curve(log_path)
    last = res.log_rows[-1] if res.log_rows else None
    if last is not None:
        print(f"steps={res.stopped_at} loss={last[1]:.6f} slot_accuracy={last[2]:.6f}")
    if res.final_accuracy is not None:
        print(f"train_set_slot_accuracy={res.final_accuracy:.6f}")
    print(f"checkpoint={out} log={log_path} figure={png}")
    return 0


def cmd_reconstruct(args) -> int:
    from .mesh_io import read_obj_file, write_obj_file
    from .mesh_prep import dequantize, normalize
    from .pipeline import load_checkpoint, reconstruct
    from .sampling import load as load_cloud
    from .sampling import sample_surface

    model, cfg, _, _ = load_checkpoint(args.ckpt)
    src = Path(args.input)
    if src.suffix.lower() == ".fpc":
        res = reconstruct(load_cloud(src), model, args.max_faces)
        mesh = dequantize(res.mesh)
    else:
        normed, rec = normalize(read_obj_file(src))
        res = reconstruct(sample_surface(normed, cfg.model.m, args.seed), model, args.max_faces)
        res.mesh.norm = rec
        mesh = dequantize(res.mesh, denormalize=True)
    write_obj_file(mesh, _parent(args.out))
    print(f"faces={res.face_count} stop_reason={res.stop_reason} "
          f"degenerate_dropped={res.degenerate_dropped} mesh_faces={mesh.n_faces}")
    return 0


def cmd_eval(args) -> int:
    from .mesh_io import read_obj_file
    from .metrics import CONVENTION, eval_reconstruction

    res = eval_reconstruction(read_obj_file(args.gt), read_obj_file(args.pred), args.samples, args.seed,
                              accelerate=not args.exact)
    print(f"# {CONVENTION}; frame = ground truth normalized to [-0.5, 0.5]^3")
    print(f"chamfer={res.chamfer:.6f} hausdorff={res.hausdorff:.6f} samples={res.n_samples} seed={res.seed}")
    return 0


def cmd_ablate(args) -> int:
    from .config import replace
    from .mesh_io import read_obj_file
    from .metrics import format_table
    from .pipeline import ABLATION_HEADER, ablate, ordering_finding
    from .plotting import figure_path, plot_ablation
    from .synthetic import corpus_split

    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, train={"seed": args.seed})
    if args.data:
        train_meshes = [read_obj_file(f) for f in _mesh_files(args.data)]
        if not args.test:
            raise UsageError("--data needs --test")
        test_meshes = [read_obj_file(f) for f in _mesh_files(args.test)]
    else:
        train_meshes, test_meshes = corpus_split(args.train_meshes, cfg.data.holdout, cfg.train.seed,
                                                 min(120, cfg.model.max_faces))
    rows = ablate(args.suite, cfg, train_meshes, test_meshes, threads=args.threads)
    table = [[r.variant] + [f"{v:.6g}" for v in r.as_list()[1:]] for r in rows]
    print(format_table(ABLATION_HEADER, table), end="")
    if args.suite == "orderings":
        print(ordering_finding(rows))
    if args.csv:
        lines = [",".join(ABLATION_HEADER)] + [",".join(str(c) for c in r.as_list()) for r in rows]
        _write_text(args.csv, "\n".join(lines) + "\n")
        png = plot_ablation(args.suite, ABLATION_HEADER, [r.as_list() for r in rows], figure_path(args.csv))
        print(f"wrote {args.csv} and {png}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    results = run_all(args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<28} rel_err={r.rel_err:.3e} tol={r.tol:.0e}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericalError(f"gradient check failed: {', '.join(failed)}")
    print(f"all {len(results)} checks passed")
    return 0


# -- parser -------------------------------------------------------------------------

def build_parser() -> Parser:
    fmt = HelpFormatter
    common = Parser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="torch intra-op threads (1 = bitwise reproducible)")

    p = Parser(prog="faceae", description="Face-token mesh autoencoder: data, training, reconstruction, evaluation.",
               formatter_class=fmt, epilog="Logging verbosity: FACE_LOG=quiet|info|debug (default info).")
    sub = p.add_subparsers(dest="command", metavar="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], formatter_class=fmt, help="write a synthetic OBJ corpus")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="JSON corpus description")
    src.add_argument("--preset", choices=["overfit"], help="built-in corpus of small varied meshes")
    s.add_argument("--count", type=int, default=20, help="meshes in the preset corpus")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=None, help="corpus seed; overrides the spec file's (which defaults to 0)")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("prep", parents=[common], formatter_class=fmt, help="tokenize one mesh")
    s.add_argument("--in", dest="input", required=True, help="input OBJ")
    s.add_argument("--resolution", type=int, default=128, help="quantization levels per axis")
    s.add_argument("--order", choices=ORDERS, default="zyx", help="face ordering")
    s.add_argument("--out", required=True, help="output token file")
    s.set_defaults(func=cmd_prep)

    s = sub.add_parser("stats", parents=[common], formatter_class=fmt, help="token-efficiency report for a corpus")
    s.add_argument("--in", dest="input", required=True, help="directory of OBJ files")
    s.add_argument("--resolution", type=int, default=128, help="quantization levels per axis")
    s.add_argument("--csv", default=None, help="also write the table here, with a PNG figure alongside (default: stdout only)")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("train", parents=[common], formatter_class=fmt, help="train a model")
    s.add_argument("--config", default=None, help="run config file (default: built-in defaults for every key)")
    s.add_argument("--data", required=True, help="directory of training OBJ files")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--resume", default=None, help="checkpoint to continue from (default: start fresh)")
    s.add_argument("--log", default=None, help="CSV metrics log (default: <out>.log.csv); a PNG is written alongside")
    s.add_argument("--seed", type=int, default=None, help="overrides [train] seed (which defaults to 0)")
    s.set_defaults(func=cmd_train, torch=True)

    s = sub.add_parser("reconstruct", parents=[common], formatter_class=fmt, help="greedy-decode a mesh")
    s.add_argument("--ckpt", required=True, help="checkpoint")
    s.add_argument("--in", dest="input", required=True, help="OBJ mesh (sampled) or .fpc point cloud")
    s.add_argument("--out", required=True, help="output OBJ")
    s.add_argument("--seed", type=int, default=0, help="surface-sampling seed for OBJ input")
    s.add_argument("--max-faces", type=int, default=None, help="decode limit (default: model max_faces)")
    s.set_defaults(func=cmd_reconstruct, torch=True)

    s = sub.add_parser("eval", parents=[common], formatter_class=fmt, help="Chamfer / Hausdorff distance")
    s.add_argument("--gt", required=True, help="ground-truth OBJ")
    s.add_argument("--pred", required=True, help="predicted OBJ")
    s.add_argument("--samples", type=int, default=4096, help="surface samples per mesh")
    s.add_argument("--seed", type=int, default=0, help="sampling seed")
    s.add_argument("--exact", action="store_true", help="brute-force nearest neighbours instead of a KD-tree")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", parents=[common], formatter_class=fmt, help="train and compare variants")
    s.add_argument("--suite", choices=["orderings", "queries", "heads"], required=True, help="variant family")
    s.add_argument("--config", default=None, help="base run config (default: built-in defaults)")
    s.add_argument("--data", default=None, help="training OBJ directory (default: built-in corpus)")
    s.add_argument("--test", default=None, help="held-out OBJ directory (required with --data)")
    s.add_argument("--train-meshes", type=int, default=20, help="size of the built-in training corpus")
    s.add_argument("--csv", default=None, help="also write the table here, with a PNG figure alongside (default: stdout only)")
    s.add_argument("--seed", type=int, default=None, help="overrides [train] seed (which defaults to 0)")
    s.set_defaults(func=cmd_ablate, torch=True)

    s = sub.add_parser("gradcheck", parents=[common], formatter_class=fmt, help="finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=0, help="seed for random inputs")
    s.set_defaults(func=cmd_gradcheck, torch=True)
    return p


def _setup_logging() -> None:
    level = os.environ.get("FACE_LOG", "info").lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"FACE_LOG must be one of {', '.join(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        if getattr(args, "torch", False):
            # only the model commands pay for importing torch
            from .tensor_core import set_determinism

            set_determinism(args.threads)
        return args.func(args)
    except FaceError as exc:
        print(f"faceae: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"faceae: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
