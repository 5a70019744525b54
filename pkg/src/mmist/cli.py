"""Command-line frontend: build styles, stylize batches, interpolation grids, cache management.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .backends import Backends, toy_backends
from .cache import INCOMPLETE, StyleCache
from .config import FIELDS, RunConfig, _bool, read_manifest, resolve
from .errors import ConfigError, MMISTError
from .images import load_image, save_image
from .orchestrator import InterpolationPlan, bilinear_ratios, build_style, interpolate, linear_ratios, stylize
from .types import StyleSpec, TextRef

log = logging.getLogger("mmist.cli")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
LOG_FORMAT = "level=%(levelname)s logger=%(name)s %(message)s"
SUFFIX = {"png": ".png", "jpeg": ".jpg"}


def make_backends(run: RunConfig) -> Backends:
    if run.backend == "toy":
        return toy_backends(0)
    from .backends.adapters import CLIPEmbedder, StyleGAN3Generator
    from .transfer import ModuleTransferNet

    p = run.backend_paths
    return Backends(
        StyleGAN3Generator.from_pickle(p["generator_pkl"]),
        CLIPEmbedder.from_pretrained(p.get("clip_model", "openai/clip-vit-base-patch32")),
        ModuleTransferNet.from_torchscript(p["transfer_encoder"], p["transfer_decoder"]),
    )


def _cache(run: RunConfig) -> StyleCache:
    return StyleCache(run.cache_root)


def _out_dir(run: RunConfig, required: bool) -> Path | None:
    if run.out is None and required:
        raise ConfigError("an output directory is required (--out or [run] out)")
    return run.out


def _write_traces(out: Path, digest: str, traces):
    tag = digest[:8]
    path = out / f"trace__{tag}.tsv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["run", "step", "L_sty"])
        for k, t in enumerate(traces):
            w.writerow([k, -1, repr(t.init_loss)])
            w.writerows([k, s, repr(v)] for s, v in t.per_step)
    from .plotting import convergence

    convergence(traces, out / f"convergence__{tag}.png")
    return path


def cmd_build(args) -> int:
    run = resolve(args)
    if args.dry_run:
        print("\n".join(["command=build", *run.plan()]))
        return EXIT_OK
    out = _out_dir(run, required=False)
    entry, traces = build_style(run.spec, run.configs, make_backends(run), _cache(run), jobs=run.jobs,
                                return_traces=True)
    print(f"digest={entry.digest}")
    for k, rep in enumerate(entry.representations):
        print(f"run={k} final_loss={rep.final_loss!r}")
    if not entry.representations:
        print("bypass=single_image")
    if out is not None and traces:
        out.mkdir(parents=True, exist_ok=True)
        print(f"trace={_write_traces(out, entry.digest, traces)}")
    return EXIT_OK


def _check_contents(paths) -> list[Path]:
    paths = [Path(p) for p in paths]
    if not paths:
        raise ConfigError("no content images given")
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise ConfigError(f"content image(s) not found: {', '.join(missing)}")
    stems = [p.stem for p in paths]
    if len(set(stems)) != len(stems):
        raise ConfigError("content images must have distinct file stems")
    return paths


def _style_for(args, run: RunConfig, backends: Backends, cache: StyleCache):
    if args.style:
        digest = cache.resolve(args.style)
        entry = cache.get(digest) if digest else None
        if entry is None:
            raise MMISTError(f"no cached style matches {args.style!r}")
        return entry
    return build_style(run.spec, run.configs, backends, cache, jobs=run.jobs)


def cmd_stylize(args) -> int:
    contents = _check_contents(args.contents)
    run = resolve(args, need_spec=not args.style)
    out = _out_dir(run, required=True)
    if args.dry_run:
        print("\n".join(["command=stylize", f"style={args.style}", *run.plan(),
                         *(f"content={p}" for p in contents)]))
        return EXIT_OK
    images = [load_image(p) for p in contents]
    backends = make_backends(run)
    entry = _style_for(args, run, backends, _cache(run))
    tag = entry.digest[:8]

    def one(k):
        result = stylize([images[k]], entry, backends)[0]
        return save_image(result, out / f"{contents[k].stem}__{tag}{SUFFIX[run.format]}", run.format.upper())

    out.mkdir(parents=True, exist_ok=True)
    if run.jobs > 1:
        with ThreadPoolExecutor(max_workers=run.jobs) as pool:
            written = list(pool.map(one, range(len(images))))
    else:
        written = [one(k) for k in range(len(images))]
    print(f"digest={entry.digest}")
    for src, dst in zip(contents, written):
        print(f"content={src} output={dst}")
    return EXIT_OK


def parse_endpoint(text: str) -> StyleSpec:
    kind, _, value = text.partition(":")
    if not value:
        raise ConfigError(f"endpoint {text!r} must look like text:<prompt>, image:<path> or config:<file>")
    if kind == "text":
        return StyleSpec((TextRef(value),))
    if kind == "image":
        from .config import _image_ref

        return StyleSpec((), (_image_ref(value),))
    if kind == "config":
        _, texts, images = read_manifest(value)
        return StyleSpec(tuple(texts), tuple(images))
    raise ConfigError(f"unknown endpoint kind {kind!r} in {text!r}")


def parse_ratios(text: str) -> list[tuple[float, ...]]:
    try:
        return [tuple(float(x) for x in row.split(",")) for row in text.split(";") if row.strip()]
    except ValueError as exc:
        raise ConfigError(f"--ratios must look like '1,0;0.5,0.5;0,1': {exc}") from exc


def grid_plan(endpoints, rows, cols, ratios_text) -> InterpolationPlan:
    n = len(endpoints)
    if not 2 <= n <= 4:
        raise ConfigError(f"a grid needs 2 to 4 endpoints, got {n}")
    if ratios_text:
        ratios = parse_ratios(ratios_text)
        rows, cols = (rows or 1), (cols or len(ratios))
    elif n == 2:
        rows, cols = rows or 1, cols or 5
        ratios = linear_ratios(rows * cols)
    elif n == 4:
        rows, cols = rows or 5, cols or 5
        ratios = bilinear_ratios(rows, cols)
    else:
        raise ConfigError("3 endpoints need explicit --ratios")
    return InterpolationPlan(tuple(endpoints), tuple(ratios), (rows, cols))


def cmd_grid(args) -> int:
    contents = _check_contents([args.content])
    endpoints = [parse_endpoint(e) for e in args.endpoint or []]
    plan = grid_plan(endpoints, args.rows, args.cols, args.ratios)
    run = resolve(args, need_spec=False)
    out = _out_dir(run, required=True)
    rows, cols = plan.shape
    if args.dry_run:
        print("\n".join(["command=grid", f"rows={rows}", f"cols={cols}", *run.plan(),
                         *(f"endpoint={e.describe()}" for e in endpoints),
                         *(f"ratios={','.join(repr(x) for x in r)}" for r in plan.ratios)]))
        return EXIT_OK
    content = load_image(contents[0])
    backends = make_backends(run)
    styles = interpolate(plan, run.configs, backends, _cache(run), jobs=run.jobs)
    cells = [stylize([content], entry, backends)[0] for entry in styles]

    out.mkdir(parents=True, exist_ok=True)
    suffix = SUFFIX[run.format]
    with open(out / "grid.tsv", "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["row", "col", "file", "digest", *(f"ratio{e}" for e in range(len(endpoints)))])
        for k, (entry, cell) in enumerate(zip(styles, cells)):
            i, j = divmod(k, cols)
            name = f"cell_r{i}_c{j}{suffix}"
            save_image(cell, out / name, run.format.upper())
            w.writerow([i, j, name, entry.digest, *(repr(x) for x in plan.ratios[k])])
    from .plotting import montage

    path = montage(cells, rows, cols, out / "montage.png", plan.ratios, [e.describe() for e in endpoints])
    print(f"cells={len(cells)} montage={path} table={out / 'grid.tsv'}")
    return EXIT_OK


def cmd_cache(args) -> int:
    run = resolve(args, need_spec=False)
    cache = _cache(run)
    w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
    if args.action == "ls":
        w.writerow(["digest", "refs", "bytes", "created_at"])
        for e in cache.entries():
            w.writerow([e["digest"], e["refs"], e["bytes"], e["created_at"]])
        return EXIT_OK
    if args.action == "rm":
        digest = cache.resolve(args.digest)
        if digest is None or not cache.evict(digest):
            print(f"error: no cache entry matches {args.digest!r}", file=sys.stderr)
            return EXIT_RUNTIME
        print(f"removed={digest}")
        return EXIT_OK
    results = cache.verify()
    w.writerow(["digest", "status", "detail"])
    corrupt = False
    for digest, ok, msg in results:
        status = "ok" if ok else "incomplete" if msg == INCOMPLETE else "corrupt"
        corrupt |= status == "corrupt"
        w.writerow([digest, status, msg])
    return EXIT_RUNTIME if corrupt else EXIT_OK


def _add_run_options(p: argparse.ArgumentParser, style: bool = True):
    g = p.add_argument_group("run")
    g.add_argument("--config", help="INI manifest; flags override its values")
    g.add_argument("--cache-root", dest="cache_root", help="cache directory (default $MMIST_CACHE_ROOT)")
    g.add_argument("--backend", choices=["toy", "checkpoint"])
    g.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    if not style:
        return
    g.add_argument("--seed", type=int)
    g.add_argument("--jobs", type=int)
    g.add_argument("--out")
    g.add_argument("--format", choices=["png", "jpeg"])
    g.add_argument("--dry-run", dest="dry_run", action="store_true", help="print the resolved plan and exit")
    g.add_argument("--generator-pkl", dest="generator_pkl")
    g.add_argument("--clip-model", dest="clip_model")
    g.add_argument("--transfer-encoder", dest="transfer_encoder")
    g.add_argument("--transfer-decoder", dest="transfer_decoder")

    s = p.add_argument_group("style")
    s.add_argument("--text", action="append", help="text style reference (repeatable)")
    s.add_argument("--image", action="append", help="image style reference (repeatable)")
    s.add_argument("--weights", help="comma-separated weights, texts first then images")
    s.add_argument("--budget", type=float)
    s.add_argument("--bypass", dest="bypass_single_image", action=argparse.BooleanOptionalAction)

    h = p.add_argument_group("hyperparameters")
    taken = {"seed", "backend", "jobs", "cache_root", "out", "format", "budget", "bypass_single_image",
             "generator_pkl", "clip_model", "transfer_encoder", "transfer_decoder"}
    for _, key, parse in FIELDS:
        if key in taken:
            continue
        flag = "--" + key.replace("_", "-")
        if parse is _bool:
            h.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction)
        else:
            h.add_argument(flag, dest=key, type=parse)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmist", description="Multimodality-guided image style transfer.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="invert and cache an aggregated style")
    _add_run_options(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("stylize", help="stylize content images with a cached or freshly built style")
    p.add_argument("contents", nargs="+")
    p.add_argument("--style", help="cached style digest (or unique prefix)")
    _add_run_options(p)
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("grid", help="interpolation sweep between 2-4 endpoint styles")
    p.add_argument("--endpoint", action="append", help="text:<prompt> | image:<path> | config:<file>")
    p.add_argument("--content", required=True)
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--ratios", help="explicit ratio tuples, e.g. '1,0;0.5,0.5;0,1'")
    _add_run_options(p)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("cache", help="inspect the style cache")
    p.add_argument("action", choices=["ls", "rm", "verify"])
    p.add_argument("digest", nargs="?")
    _add_run_options(p, style=False)
    p.set_defaults(func=cmd_cache)
    return parser


def setup_logging(quiet: bool):
    logger = logging.getLogger("mmist")
    logger.handlers.clear()
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(handler)
    logger.setLevel(logging.WARNING if quiet else logging.INFO)
    logger.propagate = False


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "cache" and args.action == "rm" and not args.digest:
        parser.error("cache rm needs a digest")
    setup_logging(args.quiet)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MMISTError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
