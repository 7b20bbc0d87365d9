import argparse
import csv
import logging
import sys
from io import StringIO
from pathlib import Path
from typing import Any, Callable, Dict, List, NoReturn, Optional, Sequence

import numpy as np

from .ascii_grid import read_ascii_grid, write_ascii_grid
from .config import (
    Finding,
    LoadedConfig,
    load_vectors,
    read_config,
    resolve_classmap,
)
from .config import validate as validate_config
from .embedding import (
    EmbeddingSet,
    cosine_disagreement,
    cosine_distance_map,
    pairwise_cosine,
    pca_rgb,
    read_embeddings_csv,
)
from .errors import GeofuseError, ParameterError, ParseError
from .fusion import (
    CATEGORICAL_RGB,
    ChannelSpec,
    FusedTensor,
    center_crop,
    proc_stack,
    stack_channels,
)
from .gft import read_gft, write_gft, write_gft_matrix
from .metrics import (
    MetricValue,
    format_report,
    mean_squared_error,
    multilabel_metrics,
    r_squared,
    segmentation_metrics,
)
from .prior import Boost, PriorConfig, PriorStack, generate_prior, read_cooccurrence
from .probe import DEFAULT_LAMBDA, data_efficiency_experiment
from .raster import GeoTransform, Grid, GridKind
from .sampling import MASK64, epoch_schedule, subset_sample, write_subset_plan
from .token_fuse import (
    DEFAULT_PATCH_SIZE,
    DEFAULT_TOKEN_DIM,
    LocationEncoder,
    PatchEmbedding,
    Projection,
    StubLocationEncoder,
    build_token_sequence,
    init_pos_embed,
    init_registers,
    patchify,
)
from .utils import atomic_write_bytes, atomic_write_text
from .vector import (
    TagSelector,
    binary_mask,
    parse_geojson,
    rasterize_classes,
    to_rgb_raster,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed ({text})") from None
    if value < 0 or value > MASK64:
        raise argparse.ArgumentTypeError(
            f"seed must be an unsigned 64-bit value ({text})"
        )
    return value


def _read_grid(path: Path, kind: GridKind = "continuous") -> Grid:
    return read_ascii_grid(path.read_bytes(), kind=kind)


def _read_numbers(path: Path, ndmin: int) -> np.ndarray:
    try:
        return np.loadtxt(
            path, delimiter=",", comments="#", ndmin=ndmin, dtype=np.float64
        )
    except ValueError as e:
        raise ParseError(f"Numbers: Invalid numeric file {path} ({e})") from None


def _emit(text: str, out: Optional[Path], summary: str) -> None:
    """Write `text` to `out` atomically and print `summary`, or print `text`."""
    if out is None:
        sys.stdout.write(text)
        return
    atomic_write_text(out, text)
    print(f"{summary} -> {out}")


def _require_out(
    args: argparse.Namespace, loaded: Optional[LoadedConfig] = None
) -> Path:
    if args.out is not None:
        return args.out
    if loaded is not None and loaded.config.output.out is not None:
        return loaded.resolve(loaded.config.output.out)
    raise ParameterError(f"{args.command}: An output path is required (--out)")


def _load(args: argparse.Namespace) -> LoadedConfig:
    if args.config is None:
        raise ParameterError(f"{args.command}: A config file is required (--config)")
    loaded, findings = read_config(args.config, overrides=args.set or [])
    _report_findings(findings)
    if loaded is None:
        raise ParameterError(f"Config: {args.config} is invalid")
    return loaded


def _report_findings(findings: Sequence[Finding]) -> None:
    for finding in findings:
        print(str(finding), file=sys.stderr)


def _build_prior(loaded: LoadedConfig) -> PriorStack:
    config = loaded.config
    if config.inputs.coarse is None:
        raise ParameterError("Prior: inputs.coarse is not set")
    coarse = _read_grid(loaded.resolve(config.inputs.coarse), kind="categorical")

    cooccurrence = None
    pairs = None
    if config.inputs.cooccurrence is not None:
        cooccurrence = read_cooccurrence(
            loaded.resolve(config.inputs.cooccurrence).read_bytes()
        )
    else:
        pairs = [
            (
                _read_grid(loaded.resolve(pair.coarse), kind="categorical"),
                _read_grid(loaded.resolve(pair.fine), kind="categorical"),
            )
            for pair in config.inputs.pairs
        ]

    boosts: List[Boost] = []
    if config.prior.boosts:
        layer = load_vectors(loaded)
        for entry in config.prior.boosts:
            mask = binary_mask(
                layer,
                TagSelector(key=entry.key, pattern=entry.pattern),
                entry.radius,
                coarse.transform,
                coarse.width,
                coarse.height,
            )
            boosts.append(
                Boost(
                    mask=mask,
                    target_class=entry.target_class,
                    weight=entry.weight,
                    source=f"{entry.key}={entry.pattern}",
                )
            )

    return generate_prior(
        PriorConfig(
            coarse=coarse,
            cooccurrence=cooccurrence,
            pairs=pairs,
            n_coarse=config.inputs.n_coarse,
            n_fine=config.inputs.n_fine,
            blur_sigma=config.prior.sigma,
            epsilon=config.prior.epsilon,
            boosts=boosts,
            post_blur_sigma=config.prior.post_sigma,
        )
    )


def cmd_rasterize(args: argparse.Namespace) -> int:
    out = _require_out(args)
    layer = parse_geojson(args.geojson.read_bytes())

    if args.like is not None:
        like = _read_grid(args.like)
        transform, width, height = like.transform, like.width, like.height
    else:
        missing = [
            name
            for name in ("west", "north", "pixel", "width", "height")
            if getattr(args, name) is None
        ]
        if missing:
            raise ParameterError(
                f"rasterize: Needs --like or --{' --'.join(missing)}"
            )
        transform = GeoTransform.from_origin(args.west, args.north, args.pixel)
        width, height = args.width, args.height

    if args.mask is not None:
        key, _, pattern = args.mask.partition("=")
        mask = binary_mask(
            layer,
            TagSelector(key=key, pattern=pattern or "*"),
            args.radius,
            transform,
            width,
            height,
        )
        grid = mask.grid
        summary = f"rasterize: mask {args.mask} ({int(mask.values.sum())} pixels)"
    else:
        if args.classmap is None:
            raise ParameterError("rasterize: Needs --classmap or --mask")
        class_map = resolve_classmap(args.classmap)
        grid = rasterize_classes(layer, class_map, transform, width, height)
        summary = f"rasterize: {len(layer.features)} features on {height}x{width}"

    atomic_write_bytes(out, write_ascii_grid(grid))
    print(f"{summary} -> {out}")
    return EXIT_OK


def cmd_rgb(args: argparse.Namespace) -> int:
    out = _require_out(args)
    classes = _read_grid(args.classes, kind="categorical")
    class_map = resolve_classmap(args.classmap)
    r, g, b = to_rgb_raster(classes, class_map, smooth_sigma=args.smooth)
    tensor = stack_channels(
        [
            ChannelSpec(grid=r, rule=CATEGORICAL_RGB, source=f"{args.classes}:r"),
            ChannelSpec(grid=g, rule=CATEGORICAL_RGB, source=f"{args.classes}:g"),
            ChannelSpec(grid=b, rule=CATEGORICAL_RGB, source=f"{args.classes}:b"),
        ]
    )
    atomic_write_bytes(out, write_gft(tensor))
    print(f"rgb: 3 channels {classes.height}x{classes.width} -> {out}")
    return EXIT_OK


def cmd_prior(args: argparse.Namespace) -> int:
    loaded = _load(args)
    out = _require_out(args, loaded)
    prior = _build_prior(loaded)
    tensor = proc_stack([], prior)
    assert prior.manifest is not None

    manifest_path = out.with_name(out.name + ".manifest.json")
    gft_bytes = write_gft(tensor)
    manifest_text = prior.manifest.model_dump_json(indent=2) + "\n"
    atomic_write_bytes(out, gft_bytes)
    try:
        atomic_write_text(manifest_path, manifest_text)
    except OSError:
        out.unlink(missing_ok=True)
        raise
    print(f"prior: {prior.n_fine} channels {prior.shape[0]}x{prior.shape[1]} -> {out}")
    print(f"prior: manifest {prior.manifest.digest()[:16]} -> {manifest_path}")
    return EXIT_OK


def _channel_specs(loaded: LoadedConfig, key: str) -> List[ChannelSpec]:
    return [
        ChannelSpec(
            grid=_read_grid(loaded.resolve(entry.path)),
            rule=entry.norm_rule(),
            source=entry.path,
        )
        for entry in getattr(loaded.config.stack, key)
    ]


def cmd_stack(args: argparse.Namespace) -> int:
    loaded = _load(args)
    out = _require_out(args, loaded)
    optical = _channel_specs(loaded, "optical")
    extra = _channel_specs(loaded, "extra")

    tensor: FusedTensor
    if loaded.config.inputs.coarse is not None:
        tensor = proc_stack(optical, _build_prior(loaded), extra)
    else:
        tensor = stack_channels(optical + extra)
    if loaded.config.stack.crop is not None:
        tensor = center_crop(tensor, loaded.config.stack.crop)

    atomic_write_bytes(out, write_gft(tensor))
    height, width = tensor.shape
    print(f"stack: {tensor.n_channels} channels {height}x{width} -> {out}")
    return EXIT_OK


def cmd_tokens(args: argparse.Namespace) -> int:
    out = _require_out(args)
    tensor = read_gft(args.image.read_bytes())
    image = tensor.data.astype(np.float64)
    seed = args.seed or 0

    embed = PatchEmbedding.initialize(
        image.shape[0], args.patch, dim=args.dim, seed=seed
    )
    patches = patchify(image, args.patch, embed)
    cls = init_registers(1, args.dim, seed=seed + 1)[0]
    registers = init_registers(args.registers, args.dim, seed=seed + 2)

    loc = None
    proj = None
    if not args.vanilla:
        if args.lat is None or args.lon is None:
            raise ParameterError(
                "tokens: --lat and --lon are required unless --vanilla"
            )
        encoder: LocationEncoder = StubLocationEncoder(seed=seed)
        logger.debug("tokens: Location encoder %s", encoder.descriptor)
        loc = encoder.encode(args.lat, args.lon)
        proj = Projection.initialize(args.dim, seed=seed + 3)

    length = patches.shape[0] + 1 + (0 if args.vanilla else 1) + args.registers
    pos_embed = init_pos_embed(length, args.dim, seed=seed + 4)
    sequence = build_token_sequence(
        patches, cls, pos_embed, loc256=loc, proj=proj, registers=registers
    )

    atomic_write_bytes(out, write_gft_matrix(sequence.z0, name="z0"))
    loc_id = f", loc id {sequence.n_patches + 1}" if sequence.has_loc else ""
    print(
        f"tokens: {len(sequence)} tokens of {args.dim} "
        f"(N={sequence.n_patches}, R={sequence.n_registers}{loc_id}) -> {out}"
    )
    return EXIT_OK


def _read_embeddings(path: Path) -> EmbeddingSet:
    return read_embeddings_csv(path.read_text(encoding="utf-8"))


def _rows_csv(header: List[str], rows: List[List[str]]) -> str:
    sio = StringIO()
    writer = csv.writer(sio, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return sio.getvalue()


def cmd_analyze(args: argparse.Namespace) -> int:
    embeddings = _read_embeddings(args.embeddings)

    if args.analysis == "cosine":
        similarity = pairwise_cosine(embeddings)
        rows = [
            [group] + [repr(float(v)) for v in similarity.matrix[i]]
            for i, group in enumerate(similarity.groups)
        ]
        text = _rows_csv(["group"] + similarity.groups, rows)
        summary = f"analyze cosine: {len(similarity.groups)} groups"
    elif args.analysis == "distmap":
        if not 0 <= args.reference_row < len(embeddings):
            raise ParameterError(
                f"analyze distmap: Reference row {args.reference_row} out of range"
            )
        reference = embeddings.vectors[args.reference_row]
        if args.after is not None:
            after = _read_embeddings(args.after)
            if len(after) != len(embeddings):
                raise ParameterError(
                    f"analyze distmap: {args.after} has {len(after)} rows, "
                    f"expected {len(embeddings)}"
                )
            distances = cosine_disagreement(
                embeddings, after, reference, after.vectors[args.reference_row]
            )
            column = "disagreement"
        else:
            distances = cosine_distance_map(embeddings, reference)
            column = "distance"
        rows = [
            [
                repr(float(embeddings.lats[i])),
                repr(float(embeddings.lons[i])),
                embeddings.groups[i],
                repr(float(distances[i])),
            ]
            for i in range(len(embeddings))
        ]
        text = _rows_csv(["lat", "lon", "group", column], rows)
        summary = f"analyze distmap: {len(embeddings)} rows"
    else:
        colors = pca_rgb(embeddings)
        rows = [
            [
                repr(float(embeddings.lats[i])),
                repr(float(embeddings.lons[i])),
                embeddings.groups[i],
            ]
            + [repr(float(v)) for v in colors.colors[i]]
            for i in range(len(embeddings))
        ]
        text = _rows_csv(["lat", "lon", "group", "r", "g", "b"], rows)
        flag = " (degenerate)" if colors.degenerate else ""
        summary = f"analyze pca: {len(embeddings)} rows, rank {colors.rank}{flag}"

    _emit(text, args.out, summary)
    return EXIT_OK


def cmd_subset(args: argparse.Namespace) -> int:
    section = None
    if args.config is not None:
        section = _load(args).config.subset
    n = args.n if args.n is not None else (section.n if section is not None else None)
    if n is None:
        raise ParameterError("subset: --n is required")
    fraction = args.fraction
    if fraction is None:
        fraction = section.fraction if section is not None else 1.0
    if args.seed is not None:
        seed = args.seed
    else:
        seed = section.seed if section is not None else 0

    plan = subset_sample(n, fraction, seed)
    _emit(
        write_subset_plan(plan),
        args.out,
        f"subset: {len(plan.indices)} of {n} (fraction {fraction}, seed {seed}, "
        f"epochs {plan.epochs})",
    )
    return EXIT_OK


def cmd_epochs(args: argparse.Namespace) -> int:
    text = "".join(
        f"{fraction}={epoch_schedule(fraction)}\n" for fraction in args.fraction
    )
    _emit(text, args.out, f"epochs: {len(args.fraction)} fractions")
    return EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    items: Dict[str, MetricValue]
    if args.kind == "seg":
        result = segmentation_metrics(
            _read_grid(args.pred, kind="categorical"),
            _read_grid(args.truth, kind="categorical"),
            args.classes,
        )
        items = dict(result.report())
    elif args.kind == "reg":
        pred = _read_numbers(args.pred, ndmin=1)
        truth = _read_numbers(args.truth, ndmin=1)
        items = {"r2": r_squared(pred, truth), "mse": mean_squared_error(pred, truth)}
    else:
        scores = _read_numbers(args.scores, ndmin=2)
        truth = _read_numbers(args.truth, ndmin=2)
        multilabel = multilabel_metrics(scores, truth, threshold=args.threshold)
        items = dict(multilabel.report())

    _emit(format_report(items, fmt=args.format), args.out, f"metrics {args.kind}")
    return EXIT_OK


def cmd_probe(args: argparse.Namespace) -> int:
    first = args.seed or 0
    seeds = range(first, first + args.seeds)
    result = data_efficiency_experiment(seeds, n_train=args.n_train, lam=args.lam)
    rows = [
        [str(trial.seed), repr(trial.r2_optical), repr(trial.r2_stacked)]
        for trial in result.trials
    ]
    text = _rows_csv(["seed", "r2_optical", "r2_stacked"], rows)
    _emit(text, args.out, "probe")
    print(f"probe: stacked beat optical in {result.wins} of {len(result.trials)} seeds")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    if args.config is None:
        raise ParameterError("validate: A config file is required (--config)")
    loaded, findings = read_config(args.config, overrides=args.set or [])
    if loaded is not None:
        findings = validate_config(loaded)
    for finding in findings:
        print(str(finding))
    if any(finding.severity == "error" for finding in findings):
        return EXIT_VALIDATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_u64)
    common.add_argument("--out", type=Path)
    common.add_argument("--config", type=Path)
    common.add_argument(
        "--set",
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="override a config key (repeatable, last wins)",
    )
    common.add_argument("--verbose", "-v", action="store_true")

    parser = _ArgumentParser(prog="geofuse")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    def command(
        name: str, handler: Callable[[argparse.Namespace], int], **kwargs: Any
    ) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, parents=[common], **kwargs)
        sub.set_defaults(handler=handler)
        return sub

    p = command(
        "rasterize", cmd_rasterize, help="burn vector features into a class grid"
    )
    p.add_argument("--geojson", type=Path, required=True)
    p.add_argument("--classmap", help="class map file or builtin:<name>")
    p.add_argument("--like", type=Path, help="copy size and transform from a grid")
    p.add_argument("--west", type=float)
    p.add_argument("--north", type=float)
    p.add_argument("--pixel", type=float)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--mask", metavar="KEY=PATTERN", help="write a binary mask instead")
    p.add_argument("--radius", type=float, default=0.0)

    p = command("rgb", cmd_rgb, help="render a class grid as RGB channels")
    p.add_argument("--classes", type=Path, required=True)
    p.add_argument("--classmap", required=True)
    p.add_argument("--smooth", type=float)

    command("prior", cmd_prior, help="generate a fine-class prior stack")
    command("stack", cmd_stack, help="stack aligned channels into a tensor")

    p = command("tokens", cmd_tokens, help="assemble a token sequence from a tensor")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--lat", type=float)
    p.add_argument("--lon", type=float)
    p.add_argument("--patch", type=int, default=DEFAULT_PATCH_SIZE)
    p.add_argument("--dim", type=int, default=DEFAULT_TOKEN_DIM)
    p.add_argument("--registers", type=int, default=0)
    p.add_argument("--vanilla", action="store_true", help="no location token")

    analyze = commands.add_parser("analyze", help="embedding analytics")
    analyses = analyze.add_subparsers(dest="analysis", metavar="analysis")
    analyses.required = True
    for name in ("cosine", "distmap", "pca"):
        p = analyses.add_parser(name, parents=[common])
        p.set_defaults(handler=cmd_analyze)
        p.add_argument("--embeddings", type=Path, required=True)
        if name == "distmap":
            p.add_argument("--reference-row", type=int, default=0)
            p.add_argument("--after", type=Path, help="second set for disagreement")

    p = command("subset", cmd_subset, help="seeded training subset plan")
    p.add_argument("--n", type=int)
    p.add_argument("--fraction", type=float)

    p = command("epochs", cmd_epochs, help="epochs for subset fractions")
    p.add_argument("--fraction", type=float, nargs="+", required=True)

    metrics = commands.add_parser("metrics", help="score predictions")
    kinds = metrics.add_subparsers(dest="kind", metavar="kind")
    kinds.required = True
    for name in ("seg", "reg", "multilabel"):
        p = kinds.add_parser(name, parents=[common])
        p.set_defaults(handler=cmd_metrics)
        p.add_argument("--format", choices=("kv", "csv"), default="kv")
        p.add_argument("--truth", type=Path, required=True)
        if name == "multilabel":
            p.add_argument("--scores", type=Path, required=True)
            p.add_argument("--threshold", type=float, default=0.5)
        else:
            p.add_argument("--pred", type=Path, required=True)
        if name == "seg":
            p.add_argument("--classes", type=int, required=True)

    p = command("probe", cmd_probe, help="synthetic stacked-vs-optical ridge probe")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--n-train", type=int, default=32)
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)

    command("validate", cmd_validate, help="check a config without writing outputs")
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_VALIDATION

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        return args.handler(args)
    except GeofuseError as e:
        print(f"geofuse: error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"geofuse: error: {e}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run())
