"""Command-line entry point: ``collage {create,reference,resume,evaluate,cka}``.

Exit codes: 0 success, 1 runtime fault, 2 usage or configuration error,
3 batch finished with some failed rows.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import EndpointConfig, Settings, read_config, resolve
from .errors import CollageError, CorruptInput, DimensionError, PreconditionError
from .metrics import batch_evaluate, cka, load_external_scores, load_manifest, relation_matrix, split_grid
from .persist import atomic_write_json
from .pipeline import Pipeline, PipelineConfig, Providers
from .plan_model import GridLayout, ProductInput, load_image, validate
from .plotting import plot_group_means, plot_relation_matrices
from .providers import (
    ContentScoringMockChat,
    LiveChat,
    LiveEmbedder,
    LiveImageGenerator,
    MockChat,
    MockEmbedder,
    MockImageGenerator,
    credential,
)

EXIT_OK, EXIT_FAULT, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("collage_agent")


class UsageError(Exception):
    pass


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subparser from overwriting a value given before the subcommand
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="INI config file")
    g.add_argument("--mock", action="store_true", default=argparse.SUPPRESS,
                   help="use deterministic offline providers")
    g.add_argument("--fixtures", type=Path, default=argparse.SUPPRESS,
                   help="directory overriding the bundled mock transcripts")
    g.add_argument("--run-dir", type=Path, default=argparse.SUPPRESS)
    g.add_argument("--max-iter", type=int, default=argparse.SUPPRESS, help="iteration budget K (>= 1)")
    g.add_argument("--tau-narr", type=int, default=argparse.SUPPRESS)
    g.add_argument("--tau-photo", type=int, default=argparse.SUPPRESS)
    g.add_argument("--gate-rule", choices=("min", "mean"), default=argparse.SUPPRESS)
    g.add_argument("--layout", default=argparse.SUPPRESS, help="grid as RxC, e.g. 2x2")
    g.add_argument("--return-policy", choices=("last", "best"), default=argparse.SUPPRESS)
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="collage", parents=[common],
                                     description="Plan, generate and critique product campaign grids.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (("create", "generate a grid from a packshot"),
                           ("reference", "generate a grid guided by a reference grid")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--packshot", type=Path, required=True)
        p.add_argument("--name", required=True)
        p.add_argument("--intent", default=None, help="optional free-text brief")
        if name == "reference":
            p.add_argument("--reference", type=Path, required=True)
        p.add_argument("--attach-reference", action="store_true",
                       help="also send the reference image to the image model")

    p = sub.add_parser("resume", parents=[common], help="continue an interrupted run in --run-dir")
    p.add_argument("--mode", choices=("creation", "reference"), default=None)

    p = sub.add_parser("evaluate", parents=[common], help="score a manifest of collages")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="output dir (default: --run-dir)")
    p.add_argument("--external-scores", type=Path, default=None, help="sidecar of precomputed scores")
    p.add_argument("--parallelism", type=int, default=None)

    p = sub.add_parser("cka", parents=[common], help="structural similarity of two grids")
    p.add_argument("--reference-grid", type=Path, required=True)
    p.add_argument("--generated-grid", type=Path, required=True)
    p.add_argument("--generated-layout", default=None, help="layout of the generated grid if it differs")
    p.add_argument("--dump-matrices", type=Path, default=None,
                   help="directory for relation_matrices.json and a heatmap")
    return parser


def _settings(args) -> Settings:
    parser = read_config(getattr(args, "config", None))
    flags = {
        "max_iter": getattr(args, "max_iter", None),
        "layout": getattr(args, "layout", None),
        "return_policy": getattr(args, "return_policy", None),
        "run_dir": getattr(args, "run_dir", None),
        "tau_narr": getattr(args, "tau_narr", None),
        "tau_photo": getattr(args, "tau_photo", None),
        "gate_rule": getattr(args, "gate_rule", None),
        "parallelism": getattr(args, "parallelism", None),
    }
    settings = resolve(flags, parser)
    report = validate(settings.gates)
    if not report.ok:
        raise UsageError("; ".join(report.violations))
    report = validate(settings.layout)
    if not report.ok:
        raise UsageError("; ".join(report.violations))
    return settings


def _need(cfg: EndpointConfig, section: str, *keys: str) -> None:
    missing = [k for k in keys if getattr(cfg, k) in (None, "")]
    if missing:
        raise UsageError(f"config section [{section}] needs {', '.join(missing)} (or pass --mock)")


def _timeout(cfg: EndpointConfig) -> dict:
    return {"timeout": cfg.timeout} if cfg.timeout else {}


def _chat(args, settings: Settings, scoring: bool = False):
    if getattr(args, "mock", False):
        cls = ContentScoringMockChat if scoring else MockChat
        return cls(getattr(args, "fixtures", None))
    _need(settings.chat, "chat", "endpoint", "model")
    return LiveChat(settings.chat.endpoint, settings.chat.model, credential("chat"), **_timeout(settings.chat))


def _embedder(args, settings: Settings):
    if getattr(args, "mock", False):
        return MockEmbedder()
    _need(settings.embed, "embed", "endpoint", "model", "dimension")
    return LiveEmbedder(settings.embed.endpoint, settings.embed.model, credential("embed"),
                        settings.embed.dimension, **_timeout(settings.embed))


def _providers(args, settings: Settings) -> Providers:
    if getattr(args, "mock", False):
        return Providers(_chat(args, settings), MockImageGenerator(), None)
    _need(settings.image, "image", "endpoint", "model")
    images = LiveImageGenerator(settings.image.endpoint, settings.image.model, credential("image"),
                                **_timeout(settings.image))
    return Providers(_chat(args, settings), images, None)


def _pipeline_config(args, settings: Settings, mode: str) -> PipelineConfig:
    return PipelineConfig(
        run_dir=settings.run_dir,
        max_iterations=settings.max_iter,
        gates=settings.gates,
        layout=settings.layout,
        mode=mode,
        return_policy=settings.return_policy,
        normalize_timestamps=bool(getattr(args, "mock", False)),
    )


def _report_run(result) -> None:
    print(f"final_collage\t{result.collage_path}")
    print(f"stop_reason\t{result.stop_reason}")
    print(f"final_iteration\t{result.final_iteration}")
    print(f"run_dir\t{result.collage_path.parent}")


def cmd_create(args, mode: str = "creation") -> int:
    settings = _settings(args)
    product = ProductInput.from_files(args.packshot, args.name, args.intent,
                                      getattr(args, "reference", None))
    pipeline = Pipeline(_providers(args, settings), attach_reference=args.attach_reference)
    result = pipeline.run(product, _pipeline_config(args, settings, mode))
    _report_run(result)
    return EXIT_OK


def cmd_reference(args) -> int:
    return cmd_create(args, mode="reference")


def cmd_resume(args) -> int:
    settings = _settings(args)
    mode = args.mode or ("reference" if (settings.run_dir / "transfer.json").exists() else "creation")
    pipeline = Pipeline(_providers(args, settings))
    result = pipeline.resume(settings.run_dir, _pipeline_config(args, settings, mode))
    _report_run(result)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    settings = _settings(args)
    items = load_manifest(args.manifest)
    external = load_external_scores(args.external_scores) if args.external_scores else None
    out = args.out or settings.run_dir
    embed = _embedder(args, settings) if any(it.mode == "reference" for it in items) else None
    result = batch_evaluate(items, _chat(args, settings, scoring=True), embed, out,
                            parallelism=settings.parallelism, external_scores=external)
    figure = plot_group_means(result.means, result.columns, Path(out) / "results_means.png")
    sys.stdout.write((Path(out) / "results.csv").read_text(encoding="utf-8"))
    print(f"# rows={len(result.rows)} failed={result.failures} out={out}"
          + (f" figure={figure}" if figure else ""))
    return EXIT_PARTIAL if result.failures else EXIT_OK


def cmd_cka(args) -> int:
    settings = _settings(args)
    ref_layout = settings.layout
    gen_layout = GridLayout.parse(args.generated_layout) if args.generated_layout else ref_layout
    if ref_layout.panel_count != gen_layout.panel_count:
        raise UsageError(f"layouts differ: {ref_layout.label} vs {gen_layout.label}")
    reference = load_image(args.reference_grid)
    generated = load_image(args.generated_grid)
    embed = _embedder(args, settings)
    try:
        r_ref = relation_matrix(split_grid(reference, ref_layout), embed)
        r_gen = relation_matrix(split_grid(generated, gen_layout), embed)
    except DimensionError as exc:
        raise UsageError(str(exc)) from exc
    if args.dump_matrices is not None:
        atomic_write_json(args.dump_matrices / "relation_matrices.json", {
            "positions": list(ref_layout.panel_order),
            "reference": r_ref.to_list(),
            "generated": r_gen.to_list(),
        })
        plot_relation_matrices(r_ref, r_gen, ref_layout.panel_order,
                               args.dump_matrices / "relation_matrices.png")
    print(f"{cka(r_ref, r_gen):.6f}")
    return EXIT_OK


COMMANDS = {
    "create": cmd_create,
    "reference": cmd_reference,
    "resume": cmd_resume,
    "evaluate": cmd_evaluate,
    "cka": cmd_cka,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"collage: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CorruptInput as exc:
        print(f"collage: CorruptInput: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except PreconditionError as exc:
        parser.print_usage(sys.stderr)
        print(f"collage: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CollageError as exc:
        print(f"collage: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
