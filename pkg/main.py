from __future__ import annotations
import sys
import json
import logging
import argparse
import dataclasses
from pathlib import Path

ROOT = Path(__file__).resolve().parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import numpy as np

from settings import LOG_FILE
from errors import ConfigInvalid, IoError, LooseRopeError
from analytics.attention import (
    AttentionConfig,
    AttentionInputs,
    baseline_attention,
    modulated_attention,
    modulated_attention_naive,
)
from analytics.metrics import inward_outward_ratio, k_in_block
from analytics.modulation import schedule_params
from analytics.numerics import DenseMap, DenseMatrix, row_entropy
from analytics.rope import PositionGrid
from analytics.saliency import PATTERNS, SaliencyMap, quantize_saliency, synth_features
from data_sources.formats import to_gray8, read_tnsr, write_pfm, write_pgm, write_tnsr
from data_sources.inputs import load_map, load_mask
from data_sources.oracles import oracle_from_spec
from pipeline.config import PipelineConfig, apply_overrides, load_config
from pipeline.runner import PipelineRun, RunDiagnostics, digest, prepare_inputs, run_pipeline, write_run_outputs
from pipeline.steering import SteeringResult, steering_loop
from report.render import render_attention_map, render_run_report

logger = logging.getLogger(__name__)

EXIT_UNRESOLVED = 3
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(verbose: bool = False) -> None:
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if LOG_FILE:
        handlers.append(logging.FileHandler(LOG_FILE))
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, handlers=handlers, force=True)


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def _flag_assignments(args: argparse.Namespace) -> list[str]:
    out = []
    if args.seed is not None:
        out.append(f"seed={args.seed}")
    if args.grid:
        try:
            h, w = (int(x) for x in args.grid.lower().split("x"))
        except ValueError:
            raise ConfigInvalid(f"--grid expects HxW, got {args.grid!r}") from None
        out.append(f"grid={json.dumps([h, w])}")
    for flag, key in (("layers", "layer_count"), ("heads", "head_count"), ("steps", "total_steps"), ("window", "modulation_window")):
        value = getattr(args, flag)
        if value is not None:
            out.append(f"{key}={value}")
    if args.lam is not None:
        out.append(f"steering.lambda0={args.lam}")
    if args.no_rope_scaling:
        out.append("rope_scaling=false")
    if args.no_attn_scaling:
        out.append("attn_scaling=false")
    if args.naive:
        out.append("naive=true")
    if args.output_dir:
        out.append(f"output_dir={json.dumps(str(args.output_dir))}")
    return out + list(args.set or [])


def build_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_config(Path(args.config) if args.config else None)
    assignments = _flag_assignments(args)
    if assignments:
        logger.debug(f"Config overrides: {assignments}")
        config = apply_overrides(config, assignments)
    return config


def _with_inputs(config: PipelineConfig, **changes) -> PipelineConfig:
    changes = {k: v for k, v in changes.items() if v is not None}
    return dataclasses.replace(config, inputs=dataclasses.replace(config.inputs, **changes)) if changes else config


def _saliency_map(values: np.ndarray, quant_levels: int | None) -> SaliencyMap:
    s = SaliencyMap(DenseMap(values))
    return quantize_saliency(s, quant_levels) if quant_levels else s


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_saliency(args: argparse.Namespace) -> int:
    config = build_config(args)
    if args.action == "synth":
        config = _with_inputs(config, features=(), synth_pattern=args.pattern)
    else:
        if not args.features:
            raise ConfigInvalid("saliency compute needs --features")
        config = _with_inputs(
            config,
            features=tuple(args.features),
            crop_mask=args.crop_mask,
            hole_mask=args.hole_mask,
        )
    if args.no_quantize:
        config = config.with_overrides(quant_levels=None)

    prepared = prepare_inputs(config)
    out = Path(args.out)
    if out.suffix.lower() == ".pgm":
        write_pgm(out, to_gray8(prepared.saliency.values.values))
    else:
        write_pfm(out, prepared.saliency.values.values)
    if args.action == "synth" and args.features_dir:
        h, w = config.grid
        stack = synth_features(args.pattern, config.seed, h, w, config.inputs.synth_layers, config.inputs.synth_channels)
        for i, layer in enumerate(stack.layers):
            write_tnsr(Path(args.features_dir) / f"features_layer{i}.tnsr", layer)
        write_pgm(Path(args.features_dir) / "crop_mask.pgm", prepared.masks.crop_mask.astype(np.uint8) * 255)
    s = prepared.saliency.values.values
    print(json.dumps({"out": str(out), "min": round(float(s.min()), 6), "max": round(float(s.max()), 6),
                      "levels": prepared.saliency.levels}))
    return 0


def load_attention_inputs(inputs_dir: Path, config: PipelineConfig, quantize: bool) -> AttentionInputs:
    """q_out/k_out/v_out/k_in/v_in.tnsr, crop_mask.pgm and saliency.pfm from one directory."""
    inputs_dir = Path(inputs_dir)
    saliency = load_map(inputs_dir / "saliency.pfm")
    h, w = saliency.shape
    blocks = {n: DenseMatrix(read_tnsr(inputs_dir / f"{n}.tnsr")) for n in ("q_out", "k_out", "v_out", "k_in", "v_in")}
    return AttentionInputs(
        **blocks,
        positions_out=PositionGrid.for_grid(h, w),
        positions_in=PositionGrid.for_grid(h, w, config.block_offset),
        crop_mask=load_mask(inputs_dir / "crop_mask.pgm", (h, w)),
        saliency=_saliency_map(saliency.values, config.quant_levels if quantize else None),
        head_count=config.head_count,
        theta_base=config.theta_base,
    )


def cmd_attend(args: argparse.Namespace) -> int:
    config = build_config(args)
    inputs = load_attention_inputs(Path(args.inputs), config, quantize=args.mode == "fast")
    r_curve, k_curve, active = schedule_params(config.schedule(), args.timestep)
    attn = AttentionConfig(r_curve, k_curve, active, rope_scaling=config.rope_scaling, attn_scaling=config.attn_scaling)
    if args.mode == "baseline":
        out = baseline_attention(inputs)
    elif args.mode == "naive":
        out = modulated_attention_naive(inputs, attn)
    else:
        out = modulated_attention(inputs, attn)

    if args.out:
        out_dir = Path(args.out)
        write_tnsr(out_dir / "context.tnsr", out.context.values)
        write_tnsr(out_dir / "weights.tnsr", np.stack([w.values for w in out.weights]))
        logger.info(f"Saved attention outputs to {out_dir}")
    print(json.dumps({
        "mode": args.mode,
        "timestep": args.timestep,
        "active": active,
        "ratio": None if out.ratio is None else round(out.ratio, 6),
        "k_in_rotations": out.k_in_rotations,
    }))
    return 0


def _report(config: PipelineConfig, diagnostics: RunDiagnostics, out_dir: Path, steering: SteeringResult | None = None) -> Path:
    return render_run_report(
        diagnostics.to_records(),
        out_dir / "report.html",
        title=f"seed {config.seed}, lambda {diagnostics.lam}",
        summary=diagnostics.summary(),
        config_json=json.dumps(config.to_dict(), indent=2, default=str),
        trace=steering.trace.to_records() if steering else None,
        unresolved=steering.unresolved if steering else False,
    )


def _emit(config: PipelineConfig, diagnostics: RunDiagnostics, prepared, out_dir: Path) -> str:
    paths = write_run_outputs(diagnostics, prepared, out_dir, trace_weights=config.trace_weights)
    run_digest = digest([paths["tokens"], paths["saliency"], paths["diagnostics_jsonl"]])
    (out_dir / "digest.txt").write_text(run_digest + "\n", encoding="utf-8")
    return run_digest


def cmd_run(args: argparse.Namespace) -> int:
    config = build_config(args)
    if args.trace_weights:
        config = config.with_overrides(trace_weights=True)
    out_dir = Path(config.output_dir)
    prepared = prepare_inputs(config)
    diagnostics = run_pipeline(config, prepared)
    run_digest = _emit(config, diagnostics, prepared, out_dir)
    _report(config, diagnostics, out_dir)
    print(f"digest {run_digest}")
    print(f"output {out_dir}")
    return 0


def cmd_steer(args: argparse.Namespace) -> int:
    config = build_config(args)
    out_dir = Path(config.output_dir)
    prepared = prepare_inputs(config)

    if not config.steering_enabled:
        logger.info("Steering disabled; single attempt at lambda0")
        diagnostics = run_pipeline(config, prepared)
        run_digest = _emit(config, diagnostics, prepared, out_dir)
        _report(config, diagnostics, out_dir)
        print(f"digest {run_digest}")
        return 0

    oracle = oracle_from_spec(args.oracle or config.oracle)
    composite_path = write_pgm(out_dir / "composite.pgm", to_gray8(prepared.composite.values))
    result = steering_loop(
        runner=lambda s, lam: PipelineRun(config, prepared, s, lam),
        oracle=oracle,
        policy=config.steering,
        s_original=prepared.saliency,
        snapshot_dir=out_dir / "snapshots",
        composite_path=composite_path,
    )
    result.trace.write_jsonl(out_dir / "trace.jsonl")
    run_digest = _emit(config, result.result, prepared, out_dir)
    _report(config, result.result, out_dir, result)
    print(f"lambdas {json.dumps(result.trace.lambdas)}")
    print(f"digest {run_digest}")
    if result.unresolved:
        print(f"ERROR:Unresolved:no Success verdict after {config.steering.max_tries} attempts", file=sys.stderr)
        return EXIT_UNRESOLVED
    return 0


def _weight_blocks(path: Path, t_in: int | None) -> list[DenseMatrix]:
    """Per-head weights from a rank-2 or rank-3 TNSR; joint rows are sliced to K_in."""
    arr = read_tnsr(path)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ConfigInvalid(f"{path}: weights must be rank 2 or 3, got rank {arr.ndim}")
    blocks = [DenseMatrix(a) for a in arr]
    if t_in is not None and blocks[0].cols != t_in:
        blocks = [k_in_block(b, t_in) for b in blocks]
    return blocks


def cmd_diagnose(args: argparse.Namespace) -> int:
    if args.metric == "ratio":
        if not args.mask:
            raise ConfigInvalid("diagnose ratio needs --mask")
        mask = load_mask(Path(args.mask))
        query_mask = load_mask(Path(args.query_mask), mask.shape) if args.query_mask else None
        blocks = _weight_blocks(Path(args.weights), mask.size)
        value = float(np.mean([inward_outward_ratio(b, mask, query_mask) for b in blocks]))
    else:
        blocks = _weight_blocks(Path(args.weights), None)
        value = float(np.mean([row_entropy(b).mean() for b in blocks]))
    print(round(value, 6))
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    config = build_config(args)
    h, w = config.grid
    arr = read_tnsr(Path(args.weights))
    if arr.ndim == 3:
        if not 0 <= args.head < arr.shape[0]:
            raise ConfigInvalid(f"head {args.head} outside {arr.shape[0]} heads")
        arr = arr[args.head]
    path = render_attention_map(DenseMatrix(arr), args.query, h, w, Path(args.out))
    print(str(path))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=str, default=None, help="PipelineConfig JSON (default: built-in defaults)")
    p.add_argument("--output-dir", type=str, default=None, help="Output directory (default: data/)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--grid", type=str, default=None, help="Latent grid as HxW, e.g. 8x8")
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--steps", type=int, default=None, help="Total denoising steps")
    p.add_argument("--window", type=int, default=None, help="Modulation window (first N steps)")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="Initial saliency scale")
    p.add_argument("--no-rope-scaling", action="store_true", help="Ablation: r = 1 everywhere")
    p.add_argument("--no-attn-scaling", action="store_true", help="Ablation: k = 1 everywhere")
    p.add_argument("--naive", action="store_true", help="Per-query loop instead of level grouping")
    p.add_argument("--set", action="append", metavar="KEY=JSON", help="Override any config key, e.g. steering.max_tries=2")
    p.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="looserope", description="Saliency-guided RoPE and attention modulation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("saliency", parents=[common], help="Compute or synthesize a saliency map")
    p.add_argument("action", choices=["compute", "synth"])
    p.add_argument("--features", nargs="+", default=None, help="Feature TNSR files (compute)")
    p.add_argument("--crop-mask", default=None, help="Crop mask PGM (compute)")
    p.add_argument("--hole-mask", default=None, help="Hole mask PGM (compute)")
    p.add_argument("--pattern", choices=PATTERNS, default="blobs", help="Synthetic feature pattern (synth)")
    p.add_argument("--features-dir", default=None, help="Also write the synthetic features and crop mask here (synth)")
    p.add_argument("--no-quantize", action="store_true")
    p.add_argument("--out", required=True, help="Saliency output (.pfm or .pgm)")
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("attend", parents=[common], help="One joint-attention layer on tensors from a directory")
    p.add_argument("--inputs", required=True, help="Directory with q_out/k_out/v_out/k_in/v_in.tnsr, crop_mask.pgm, saliency.pfm")
    p.add_argument("--mode", choices=["baseline", "naive", "fast"], default="fast")
    p.add_argument("--timestep", type=int, default=0)
    p.add_argument("--out", default=None, help="Write context.tnsr and weights.tnsr here")
    p.set_defaults(func=cmd_attend)

    p = sub.add_parser("run", parents=[common], help="Full toy pipeline at a fixed saliency scale")
    p.add_argument("--trace-weights", action="store_true", help="Write last-step attention weights per layer")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("steer", parents=[common], help="Pipeline under the saliency steering loop")
    p.add_argument("--oracle", default=None, help="script:v1,v2 | threshold[:low,high] | command[:cmd] | http[:url]")
    p.set_defaults(func=cmd_steer)

    p = sub.add_parser("diagnose", parents=[common], help="Locality diagnostics on a weights file")
    p.add_argument("metric", choices=["ratio", "entropy"])
    p.add_argument("--weights", required=True, help="Weights TNSR (rank 2, or heads x rows x cols)")
    p.add_argument("--mask", default=None, help="Crop mask PGM over the input-image keys")
    p.add_argument("--query-mask", default=None, help="Rows to measure (default: the crop mask)")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("render", parents=[common], help="Render one query's attention over K_in as PGM")
    p.add_argument("--weights", required=True)
    p.add_argument("--query", type=int, required=True)
    p.add_argument("--head", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def cli_dispatch(argv: list[str]) -> int:
    """Parse, run one subcommand, and map failures to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        if e.code in (0, None):
            return 0
        print("ERROR:Usage:invalid command line", file=sys.stderr)
        return 1

    configure_logging(args.verbose)
    try:
        return args.func(args)
    except LooseRopeError as e:
        logger.error(f"{e.code}: {e}", exc_info=args.verbose)
        print(f"ERROR:{e.code}:{e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O failure: {e}", exc_info=True)
        print(f"ERROR:{IoError.__name__}:{e}", file=sys.stderr)
        return IoError.exit_code
    except ValueError as e:
        logger.error(f"Invalid input: {e}", exc_info=True)
        print(f"ERROR:{ConfigInvalid.__name__}:{e}", file=sys.stderr)
        return ConfigInvalid.exit_code


if __name__ == "__main__":
    sys.exit(cli_dispatch(sys.argv[1:]))
