"""Run configuration: an INI-style manifest plus command-line overrides.

Example manifest::

    [run]
    seed = 7
    backend = toy

    [patch]
    n_crop = 16

    [text:oil]
    text = oil painting
    weight = 600

    [image:ref]
    path = ref.png       ; relative to the manifest
    weight = 400

Every ``[text:*]`` / ``[image:*]`` section is one style reference. Flags
given on the command line win over manifest values; inline ``--text`` /
``--image`` flags replace the manifest's references as a whole.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .images import default_source_image, load_image
from .orchestrator import StyleConfigs
from .styleloss import DEFAULT_TEMPLATES, LossConfig
from .types import DEFAULT_WEIGHT_BUDGET, BoostConfig, ImageRef, InversionConfig, PatchConfig, StyleSpec, TextRef


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# (section, key, parser); the argparse dest is the key itself
FIELDS = [
    ("run", "seed", int),
    ("run", "backend", str),
    ("run", "jobs", int),
    ("run", "cache_root", str),
    ("run", "out", str),
    ("run", "format", str),
    ("style", "budget", float),
    ("style", "bypass_single_image", _bool),
    ("patch", "n_crop", int),
    ("patch", "patch_size", int),
    ("patch", "embed_size", int),
    ("patch", "distortion_scale", float),
    ("patch", "augment", _bool),
    ("inversion", "learning_rate", float),
    ("inversion", "iterations", int),
    ("inversion", "init_candidates", int),
    ("inversion", "early_stop_tol", float),
    ("inversion", "fixed_patches", _bool),
    ("boost", "n_styles", int),
    ("loss", "src_text", str),
    ("loss", "src_image", str),
    ("loss", "templates", str),
    ("loss", "ref_seed", int),
    ("backend", "generator_pkl", str),
    ("backend", "clip_model", str),
    ("backend", "transfer_encoder", str),
    ("backend", "transfer_decoder", str),
]
PATH_KEYS = {"cache_root", "out", "src_image", "generator_pkl", "transfer_encoder", "transfer_decoder"}
FORMATS = ("png", "jpeg")


@dataclass(eq=False)
class RunConfig:
    spec: StyleSpec | None
    configs: StyleConfigs
    seed: int = 0
    backend: str = "toy"
    backend_paths: dict = field(default_factory=dict)
    jobs: int = 1
    cache_root: Path | None = None
    out: Path | None = None
    format: str = "png"

    def plan(self) -> list[str]:
        """key=value lines describing the resolved configuration."""
        lines = [f"backend={self.backend}", f"seed={self.seed}", f"jobs={self.jobs}",
                 f"cache_root={self.cache_root}", f"out={self.out}", f"format={self.format}"]
        lines += [f"{k}={v}" for k, v in sorted(self.backend_paths.items())]
        if self.spec is not None:
            c = self.spec.canonical()
            lines += [f"ref=text text={r.text!r} weight={r.weight!r}" for r in c.text_refs]
            lines += [f"ref=image name={r.name} sha={r.digest[:12]} weight={r.weight!r}" for r in c.image_refs]
        for section, values in self.configs.snapshot().items():
            if isinstance(values, dict):
                lines += [f"{section}.{k}={v!r}" for k, v in values.items()]
            else:
                lines.append(f"{section}={values!r}")
        return lines


def read_manifest(path) -> tuple[dict, list[TextRef], list[ImageRef]]:
    """Flat ``{key: value}`` settings plus the manifest's style references."""
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    known = {(s, k): p for s, k, p in FIELDS}
    values, texts, images = {}, [], []
    for section in parser.sections():
        items = dict(parser.items(section))
        kind = section.split(":", 1)[0].strip()
        if kind in ("text", "image"):
            weight = _parse(section, "weight", items.pop("weight", "1"), float)
            if kind == "text":
                if "text" not in items:
                    raise ConfigError(f"[{section}] needs a 'text' key")
                texts.append(TextRef(items.pop("text"), weight))
            else:
                if "path" not in items:
                    raise ConfigError(f"[{section}] needs a 'path' key")
                images.append(_image_ref(path.parent / items.pop("path"), weight))
            if items:
                raise ConfigError(f"[{section}] has unknown keys {sorted(items)}")
            continue
        for key, raw in items.items():
            if (section, key) not in known:
                raise ConfigError(f"unknown config key [{section}] {key}")
            val = _parse(section, key, raw, known[section, key])
            if key in PATH_KEYS:
                val = str(path.parent / val)
            values[key] = val
    return values, texts, images


def _parse(section, key, raw, parser):
    try:
        return parser(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def _image_ref(path, weight=1.0) -> ImageRef:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"image reference not found: {path}")
    try:
        img = load_image(path)
    except OSError as exc:
        raise ConfigError(f"cannot read image reference {path}: {exc}") from exc
    return ImageRef(img, weight, path.stem)


def parse_weights(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"--weights must be comma-separated numbers: {exc}") from exc


def resolve(args, need_spec: bool = True) -> RunConfig:
    """Merge manifest and flags into a fully validated RunConfig."""
    values, texts, images = {}, [], []
    if getattr(args, "config", None):
        values, texts, images = read_manifest(args.config)
    for _, key, _ in FIELDS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag

    cli_texts = [TextRef(t) for t in getattr(args, "text", None) or []]
    cli_images = [_image_ref(p) for p in getattr(args, "image", None) or []]
    if cli_texts or cli_images:
        texts, images = cli_texts, cli_images

    spec = None
    budget = values.get("budget", DEFAULT_WEIGHT_BUDGET)
    if texts or images:
        spec = StyleSpec(tuple(texts), tuple(images), budget)
        if getattr(args, "weights", None):
            spec = spec.with_weights(parse_weights(args.weights))
    elif need_spec:
        raise ConfigError("no style references given: set text_refs or image_refs (--text/--image or a config file)")
    elif getattr(args, "weights", None):
        raise ConfigError("--weights given without any --text/--image reference")

    seed = values.get("seed", 0)
    pick = lambda keys: {k: values[k] for k in keys if k in values}  # noqa: E731
    patch = PatchConfig(**pick(["n_crop", "patch_size", "embed_size", "distortion_scale", "augment"]))
    inversion = InversionConfig(rng_seed=seed, **pick(["learning_rate", "iterations", "init_candidates",
                                                       "early_stop_tol", "fixed_patches"]))
    boost = BoostConfig(**pick(["n_styles"]))
    loss_kw = pick(["src_text", "ref_seed"])
    if "src_image" in values:
        loss_kw["src_image"] = _image_ref(values["src_image"]).image
    else:
        loss_kw["src_image"] = default_source_image()
    if "templates" in values:
        loss_kw["prompt_templates"] = tuple(t.strip() for t in values["templates"].split("|") if t.strip())
    else:
        loss_kw["prompt_templates"] = DEFAULT_TEMPLATES
    configs = StyleConfigs(patch, inversion, boost, LossConfig(**loss_kw),
                           bypass_single_image=values.get("bypass_single_image", True))

    backend = values.get("backend", "toy")
    paths = pick(["generator_pkl", "clip_model", "transfer_encoder", "transfer_decoder"])
    if backend not in ("toy", "checkpoint"):
        raise ConfigError(f"backend must be 'toy' or 'checkpoint', got {backend!r}")
    if backend == "checkpoint":
        missing = [k for k in ("generator_pkl", "transfer_encoder", "transfer_decoder") if k not in paths]
        if missing:
            raise ConfigError(f"checkpoint backend needs {', '.join(missing)}")
    fmt = values.get("format", "png").lower()
    if fmt not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}, got {fmt!r}")
    jobs = values.get("jobs", 1)
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    cache_root = values.get("cache_root") or os.environ.get("MMIST_CACHE_ROOT")
    out = values.get("out")
    return RunConfig(spec, configs, seed, backend, paths, jobs,
                     Path(cache_root) if cache_root else None, Path(out) if out else None, fmt)
