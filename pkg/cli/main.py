"""
Command-line interface for pddkit.

Subcommands: pdd, amd, dist, mds, train, predict, bench, gen. Every command
writes its outputs and a manifest into a run directory (``--out`` or
``<PDDKIT_OUT_ROOT>/<timestamp>-<hash>``). Exit codes: 0 success, 2 invalid
input, 3 numerical failure, 1 anything else.
"""
import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import structlog

from cli.bench import run_bench
from cli.manifest import RunRecorder, run_directory
from crystal.cif import read_cif, write_cif
from crystal.geometry import random_periodic_set
from crystal.mds import classical_mds, write_embedding
from crystal.metric import (
    GROUND_METRICS,
    distance_matrix,
    emd,
    read_distance_matrix,
    write_distance_matrix,
)
from crystal.pdd import amd, amd_frame, pdd, read_pdd, write_pdd
from pst.data import build_dataset, read_targets
from pst.trainer import history_frame, load_checkpoint, restore, save_checkpoint, train
from shared import __version__
from shared.config import get_config, get_config_manager, read_config_file, resolve_model_config
from shared.embeddings import embedding_dim, load_embedding_table
from shared.errors import InputError, PddkitError
from shared.logging_setup import configure_logging
from shared.types import EncodingMode, PddkitSettings, PeriodicSet


logger = structlog.get_logger()

ERRORS_SIDECAR = "pdd.errors"


def collect_cif_paths(inputs: Sequence[str]) -> List[Path]:
    """Expand directories to their ``*.cif`` files; return every path sorted."""
    paths = set()
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            paths.update(p for p in path.glob("*.cif") if p.is_file())
        elif path.exists():
            paths.add(path)
        else:
            raise InputError(f"input {item} does not exist")
    if not paths:
        raise InputError("no CIF files found in the given inputs")
    return sorted(paths)


def _load(path: Path) -> Tuple[Path, Optional[List[PeriodicSet]], Optional[str]]:
    try:
        return path, read_cif(path), None
    except InputError as e:
        return path, None, str(e)


def load_structures(
    paths: Sequence[Path], threads: int
) -> Tuple[List[Tuple[Path, List[PeriodicSet]]], List[Tuple[Path, str]]]:
    """Parse files in parallel; results keep the sorted path order."""
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(_load, paths))
    loaded = [(path, sets) for path, sets, error in results if error is None]
    failed = [(path, error) for path, sets, error in results if error is not None]
    for path, error in failed:
        logger.warning("Failed to load structure file", path=str(path), error=error)
    return loaded, failed


def _flatten(loaded: Sequence[Tuple[Path, List[PeriodicSet]]]) -> List[PeriodicSet]:
    sets = [s for _, group in loaded for s in group]
    seen = set()
    for s in sets:
        if s.id in seen:
            raise InputError(f"structure id {s.id!r} occurs more than once")
        seen.add(s.id)
    return sets


def _output_names(path: Path, count: int) -> List[str]:
    if count == 1:
        return [path.stem]
    return [f"{path.stem}.{i}" for i in range(count)]


def _failure_label(path: Path, pset: PeriodicSet, count: int) -> str:
    return str(path) if count == 1 else f"{path} [{pset.id}]"


def _write_errors(out_dir: Path, failed: Sequence[Tuple[Union[Path, str], str]]) -> Optional[Path]:
    if not failed:
        return None
    sidecar = out_dir / ERRORS_SIDECAR
    sidecar.write_text("".join(f"{path}: {error}\n" for path, error in failed), encoding="utf-8")
    return sidecar


def cmd_pdd(args: argparse.Namespace, settings: PddkitSettings, out_dir: Path, run: RunRecorder) -> int:
    paths = collect_cif_paths(args.inputs)
    with run.phase("parse"):
        loaded, failed = load_structures(paths, args.threads)

    def compute(item: Tuple[Path, List[PeriodicSet]]) -> Tuple[List[Tuple[str, Any]], List[Tuple[str, str]]]:
        path, sets = item
        done, errors = [], []
        for name, s in zip(_output_names(path, len(sets)), sets):
            try:
                done.append((name, pdd(s, args.k, args.tol, args.species_aware,
                                       settings.max_supercell_points)))
            except PddkitError as e:
                logger.warning("Failed to compute PDD", path=str(path), structure=s.id, error=str(e))
                errors.append((_failure_label(path, s, len(sets)), str(e)))
        return done, errors

    with run.phase("pdd"):
        with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
            results = list(pool.map(compute, loaded))
    for _, errors in results:
        failed.extend(errors)
    failed.sort(key=lambda item: str(item[0]))

    with run.phase("write"):
        for (path, _), (group, _) in zip(loaded, results):
            run.add_input(path)
            for name, p in group:
                target = write_pdd(p, out_dir / f"{name}.pdd.{args.format}", args.format)
                run.add_output(target)
        sidecar = _write_errors(out_dir, failed)
        if sidecar:
            run.add_output(sidecar)

    logger.info("Computed PDDs", files=len(loaded), failed=len(failed), out=str(out_dir))
    return 2 if failed else 0


def cmd_amd(args: argparse.Namespace, settings: PddkitSettings, out_dir: Path, run: RunRecorder) -> int:
    paths = collect_cif_paths(args.inputs)
    with run.phase("parse"):
        loaded, failed = load_structures(paths, args.threads)
    _flatten(loaded)  # rejects duplicate ids
    vectors = []
    with run.phase("amd"):
        for path, sets in loaded:
            for s in sets:
                try:
                    p = pdd(s, args.k, args.tol, args.species_aware, settings.max_supercell_points)
                except PddkitError as e:
                    logger.warning("Failed to compute PDD", path=str(path), structure=s.id, error=str(e))
                    failed.append((_failure_label(path, s, len(sets)), str(e)))
                    continue
                vectors.append(amd(p))
    failed.sort(key=lambda item: str(item[0]))

    with run.phase("write"):
        for path, _ in loaded:
            run.add_input(path)
        if vectors:
            target = out_dir / f"amd.{args.format}"
            if args.format == "csv":
                amd_frame(vectors).to_csv(target, index=False, float_format="%.17g",
                                          lineterminator="\n")
            else:
                target.write_text(json.dumps([a.to_dict() for a in vectors], indent=2) + "\n",
                                  encoding="utf-8")
            run.add_output(target)
        sidecar = _write_errors(out_dir, failed)
        if sidecar:
            run.add_output(sidecar)
    return 2 if failed else 0


def cmd_dist(args: argparse.Namespace, settings: PddkitSettings, out_dir: Path, run: RunRecorder) -> int:
    if args.matrix:
        files = sorted(Path(args.matrix).glob("*.pdd.json"))
        if not files:
            raise InputError(f"no *.pdd.json files in {args.matrix}")
        pdds = [read_pdd(f) for f in files]
        for f in files:
            run.add_input(f)
        ids = [p.source_id or f.name[: -len(".pdd.json")] for p, f in zip(pdds, files)]
        with run.phase("emd"):
            matrix = distance_matrix(pdds, metric=args.metric, threads=args.threads)
        target = write_distance_matrix(matrix, ids, out_dir / "distances.csv")
        run.add_output(target)
        print(target)
        return 0

    if len(args.pdds) != 2:
        raise InputError("dist needs exactly two PDD files, or --matrix DIR")
    p, q = (read_pdd(f) for f in args.pdds)
    for f in args.pdds:
        run.add_input(f)
    with run.phase("emd"):
        result = emd(p, q, metric=args.metric)
    print(f"{result.cost:.17g}")
    if args.emit_plan:
        plan = out_dir / "plan.json"
        plan.write_text(json.dumps(result.plan.to_dict(), indent=2) + "\n", encoding="utf-8")
        run.add_output(plan)
        print(json.dumps(result.plan.to_dict()))
    return 0


def cmd_mds(args: argparse.Namespace, settings: PddkitSettings, out_dir: Path, run: RunRecorder) -> int:
    matrix, ids = read_distance_matrix(args.matrix)
    run.add_input(args.matrix)
    with run.phase("mds"):
        embedding = classical_mds(matrix, dims=args.dims, labels=ids)
    target = write_embedding(embedding, out_dir / "embedding.csv")
    run.add_output(target)
    print(f"stress {embedding.stress:.17g}")
    return 0


def _model_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "k": args.k,
        "collapse_tol": args.tol,
        "d_model": args.d_model,
        "heads": args.heads,
        "encoders": args.encoders,
        "encoding": args.encoding,
        "epochs": args.epochs,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "shift_targets": True if args.shift_targets else None,
    }


def cmd_train(args: argparse.Namespace, settings: PddkitSettings, out_dir: Path, run: RunRecorder) -> int:
    file_data = read_config_file(args.config) if args.config else {}
    if args.config:
        run.add_input(args.config)
    source = args.embeddings or settings.embeddings
    table = load_embedding_table(source, timeout=settings.http_timeout)
    overrides = _model_overrides(args)
    if table is not None:
        overrides["species_dim"] = embedding_dim(table)
    config, opts = resolve_model_config(file_data, overrides)
    run.manifest.config.update({"model": config.model_dump(mode="json"),
                                "train": opts.model_dump(mode="json")})
    run.manifest.seed = opts.seed

    paths = collect_cif_paths(args.inputs)
    loaded, failed = load_structures(paths, args.threads)
    if failed:
        _write_errors(out_dir, failed)
        raise InputError(f"{len(failed)} structure files failed to load")
    for path, _ in loaded:
        run.add_input(path)
    run.add_input(args.targets)

    with run.phase("dataset"):
        records = build_dataset(_flatten(loaded), config, read_targets(args.targets), table,
                                settings.max_supercell_points)
    with run.phase("train"):
        result = train(records, config, opts)

    checkpoint = save_checkpoint(result.trained, out_dir / "checkpoint.json", embeddings=source)
    history = out_dir / "history.csv"
    history_frame(result.history).to_csv(history, index=False, float_format="%.17g",
                                         lineterminator="\n")
    run.add_output(checkpoint)
    run.add_output(history)
    print(checkpoint)
    return 0


def cmd_predict(args: argparse.Namespace, settings: PddkitSettings, out_dir: Path, run: RunRecorder) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    run.add_input(args.checkpoint)
    trained = restore(checkpoint)
    config = trained.config
    table = None
    if config.encoding != EncodingMode.STRUCTURE:
        table = load_embedding_table(args.embeddings or checkpoint.embeddings,
                                     timeout=settings.http_timeout)

    paths = collect_cif_paths(args.inputs)
    loaded, failed = load_structures(paths, args.threads)
    if failed:
        _write_errors(out_dir, failed)
        raise InputError(f"{len(failed)} structure files failed to load")
    for path, _ in loaded:
        run.add_input(path)

    with run.phase("dataset"):
        records = build_dataset(_flatten(loaded), config, None, table, settings.max_supercell_points)
    with run.phase("predict"):
        predictions = trained.predict(records)

    target = out_dir / "predictions.csv"
    lines = ["id,prediction"] + [f"{r.id},{value:.17g}" for r, value in zip(records, predictions)]
    target.write_text("\n".join(lines) + "\n", encoding="utf-8")
    run.add_output(target)
    print(target)
    return 0


def cmd_bench(args: argparse.Namespace, settings: PddkitSettings, out_dir: Path, run: RunRecorder) -> int:
    with run.phase("bench"):
        report = run_bench(args.sizes, k=args.k, repeats=args.repeats, seed=args.seed)
    target = out_dir / "bench.csv"
    report["table"].to_csv(target, index=False, float_format="%.6g", lineterminator="\n")
    run.add_output(target)
    print(f"pdd scaling exponent {report['pdd_exponent']:.3f}")
    print(f"emd scaling exponent {report['emd_exponent']:.3f}")
    return 0


def cmd_gen(args: argparse.Namespace, settings: PddkitSettings, out_dir: Path, run: RunRecorder) -> int:
    with run.phase("generate"):
        for i in range(args.count):
            pset = random_periodic_set(args.seed + i, args.m, args.distortion)
            target = out_dir / f"{pset.id}.cif"
            target.write_text(write_cif(pset), encoding="utf-8")
            run.add_output(target)
    logger.info("Generated corpus", count=args.count, m=args.m, out=str(out_dir))
    return 0


COMMANDS = {
    "pdd": cmd_pdd,
    "amd": cmd_amd,
    "dist": cmd_dist,
    "mds": cmd_mds,
    "train": cmd_train,
    "predict": cmd_predict,
    "bench": cmd_bench,
    "gen": cmd_gen,
}


def _add_invariant_flags(parser: argparse.ArgumentParser, settings: PddkitSettings) -> None:
    parser.add_argument("inputs", nargs="+", help="CIF files or directories")
    parser.add_argument("--k", type=int, default=settings.k, help="neighbours per row")
    parser.add_argument("--tol", type=float, default=settings.tolerance, help="collapse tolerance")
    parser.add_argument("--species-aware", action=argparse.BooleanOptionalAction, default=True)
    parser.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser(settings: PddkitSettings) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pddkit", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pddkit {__version__}")
    parser.add_argument("--out", help="output directory (default: a new run directory)")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: PDDKIT_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_invariant_flags(sub.add_parser("pdd", help="compute PDDs of CIF files"), settings)
    _add_invariant_flags(sub.add_parser("amd", help="compute AMD vectors of CIF files"), settings)

    p = sub.add_parser("dist", help="EMD between two PDDs or a matrix over a directory")
    p.add_argument("pdds", nargs="*", help="two PDD JSON files")
    p.add_argument("--matrix", help="directory of *.pdd.json files")
    p.add_argument("--metric", choices=GROUND_METRICS, default="chebyshev")
    p.add_argument("--emit-plan", action="store_true", help="also output the transport plan")

    p = sub.add_parser("mds", help="embed a distance matrix CSV")
    p.add_argument("matrix", help="distance matrix CSV")
    p.add_argument("--dims", type=int, choices=(2, 3), default=2)

    p = sub.add_parser("train", help="train a Periodic Set Transformer")
    p.add_argument("inputs", nargs="+", help="CIF files or directories")
    p.add_argument("--targets", required=True, help="CSV with columns id,value")
    p.add_argument("--config", help="TOML or JSON model/training config")
    p.add_argument("--embeddings", help="species embedding CSV path or URL")
    p.add_argument("--k", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--d-model", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--encoders", type=int)
    p.add_argument("--encoding", choices=[m.value for m in EncodingMode])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--shift-targets", action="store_true",
                   help="train on targets minus their training-set mean")

    p = sub.add_parser("predict", help="predict with a trained checkpoint")
    p.add_argument("inputs", nargs="+", help="CIF files or directories")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embeddings", help="override the checkpoint's embedding table")

    p = sub.add_parser("bench", help="time PDD and EMD against motif size")
    p.add_argument("--sizes", type=int, nargs="+", default=[2, 4, 8, 16])
    p.add_argument("--k", type=int, default=settings.k)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gen", help="write a random corpus of CIF files")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--distortion", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Main entry point for the command line.

    Returns:
        Process exit code.
    """
    try:
        settings = get_config()
    except PddkitError as e:
        configure_logging()
        logger.error("Invalid configuration", error=str(e))
        return e.exit_code

    args = build_parser(settings).parse_args(argv)
    log_config = get_config_manager().get_logging_config()
    configure_logging(args.log_level or log_config["level"], log_config["format"], log_config["file"])
    args.threads = args.threads or settings.threads

    options = {key: value for key, value in vars(args).items() if key not in ("out", "log_level")}
    try:
        out_dir = Path(args.out) if args.out else run_directory(settings.out_root, args.command, options)
        out_dir.mkdir(parents=True, exist_ok=True)
        run = RunRecorder(args.command, options, seed=getattr(args, "seed", None))
        try:
            return COMMANDS[args.command](args, settings, out_dir, run)
        finally:
            run.write(out_dir)
    except PddkitError as e:
        logger.error("Command failed", command=args.command, error=str(e),
                     error_type=type(e).__name__, exit_code=e.exit_code)
        return e.exit_code
    except Exception as e:
        logger.exception("Unexpected failure", command=args.command, error=str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
