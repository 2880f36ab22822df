import argparse
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

from dotenv import load_dotenv
from pydantic import ValidationError

# BLAS reads its thread variables when numpy loads
load_dotenv()

from src.adc.direction_controller import PatchRect, ScanOrder, plan_heatmap, render_plan, split_base, split_outpaint
from src.codec.captions import CAPTION_LEN, WORDS, tokenize_caption
from src.codec.codebook import Codebook
from src.codec.patterns import PatternFamily, classify_pattern, synth_dataset
from src.decoder.decoder_loader import DecoderLoader
from src.decoder.vision_decoder import VisionDecoder
from src.errors import ConfigError, DataError, FormatError, InvariantError, PatchloomError, UsageError
from src.numerics.gradcheck import run_gradchecks
from src.numerics.tensor import set_precision
from src.pipeline.ablation import SWEEPS, run_sweep
from src.pipeline.bench import bench_pool, csv_text, write_csv
from src.pipeline.generator import Generator
from src.pipeline.reference import reference_generate
from src.pipeline.trainer import Trainer
from src.state.grid_state import Extent, GridDims, TokenGrid, parse_grid
from src.state.model_state import PRESETS, LocalMode, ModelConfig, RpeFeed
from src.state.pipeline_state import (
    GenRequest,
    LossMode,
    ReportEncoder,
    RunConfig,
    RunReport,
    RuntimeSettings,
    SamplerConfig,
    Task,
    TrainConfig,
    default_extent,
)
from src.tools.checkpoint_tool import save_checkpoint
from src.tools.nwit_tool import read_dataset, read_nwit, write_nwit
from src.tools.ppm_tool import write_ppm

logger = logging.getLogger("patchloom")

GRADCHECK_TOLERANCE = 1e-4


class CommandParser(argparse.ArgumentParser):
    """Argument errors become usage errors instead of exiting the process."""

    def error(self, message):
        raise UsageError(message)


def _grid(text: str) -> tuple[int, int, int]:
    try:
        return parse_grid(text)
    except ConfigError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _extent(text: str) -> Extent:
    try:
        return Extent.parse(text)
    except ConfigError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _place(text: str) -> tuple[int, int]:
    try:
        row, col = (int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad placement {text!r}, expected R,C") from None
    return row, col


def build_parser() -> CommandParser:
    orders = [o.value for o in ScanOrder]

    common = CommandParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path)

    model = CommandParser(add_help=False)
    model.add_argument("--preset", choices=sorted(PRESETS))
    model.add_argument("--mode", choices=[m.value for m in LocalMode])
    model.add_argument("--extent", type=_extent, help="W,H,F context extent in patches/frames")
    model.add_argument("--rpe-feed", choices=[f.value for f in RpeFeed])
    model.add_argument("--no-caches", action="store_true", help="replicate layer-0 context at every layer")

    sampling = CommandParser(add_help=False)
    sampling.add_argument("--ckpt")
    sampling.add_argument("--mode", choices=[m.value for m in LocalMode], help="local decoding mode")
    sampling.add_argument("--sampler", choices=["greedy", "topk"], default="greedy")
    sampling.add_argument("--topk", type=int, default=1)
    sampling.add_argument("--temperature", type=float, default=1.0)
    sampling.add_argument("--order", choices=orders, default="omega")
    sampling.add_argument("--no-pool", action="store_true", help="full-context reference decoding")

    parser = CommandParser(prog="patchloom", description="Bounded-context patch-level generation engine")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CommandParser)

    train = sub.add_parser("train", parents=[common, model], help="train a decoder")
    train.add_argument("--grid", type=_grid)
    train.add_argument("--data", type=Path, help="directory of .nwit grids (synthetic patterns when omitted)")
    train.add_argument("--steps", type=int, help="training steps (batches)")
    train.add_argument("--batch-size", type=int)
    train.add_argument("--loss", choices=[m.value for m in LossMode])
    train.add_argument("--order", choices=orders, help="train on this order only")

    generate = sub.add_parser("generate", parents=[common, sampling], help="unconditional, T2I or T2V generation")
    generate.add_argument("--grid", type=_grid, default=(4, 4, 1))
    generate.add_argument("--text")

    outpaint = sub.add_parser("outpaint", parents=[common, sampling], help="grow a canvas around a condition grid")
    outpaint.add_argument("--data", type=Path, required=True, help="condition .nwit file")
    outpaint.add_argument("--place", type=_place, default=(0, 0))
    outpaint.add_argument("--target", type=_grid, required=True)

    animate = sub.add_parser("animate", parents=[common, sampling], help="continue a first frame into a video")
    animate.add_argument("--data", type=Path, required=True, help="first-frame .nwit file")
    animate.add_argument("--grid", type=_grid, required=True, help="HxWxF video size")

    plan = sub.add_parser("plan-order", parents=[common], help="print a generation order")
    plan.add_argument("--grid", type=_grid, default=(3, 3, 1))
    plan.add_argument("--order", choices=orders, default="omega")
    plan.add_argument("--place", type=_place, default=(0, 0))
    plan.add_argument("--target", type=_grid, help="outpainting canvas; --grid is then the condition size")

    bench = sub.add_parser("bench", parents=[common], help="per-step context and pool cost")
    bench.add_argument("--grid", type=_grid, default=(4, 32, 1))
    bench.add_argument("--extent", type=_extent, default=Extent(2, 2, 0))
    bench.add_argument("--order", choices=orders, default="omega")
    bench.add_argument("--place", type=_place)
    bench.add_argument("--target", type=_grid)
    bench.add_argument("--no-pool", action="store_true")

    gradcheck = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    gradcheck.add_argument("--cases", type=int)

    evaluate = sub.add_parser("eval", parents=[common], help="held-out cross-entropy")
    evaluate.add_argument("--ckpt")
    evaluate.add_argument("--data", type=Path)
    evaluate.add_argument("--grid", type=_grid)

    ablate = sub.add_parser("ablate", parents=[common], help="short training runs varying one design choice")
    ablate.add_argument("--sweep", choices=sorted(SWEEPS), required=True)
    ablate.add_argument("--steps", type=int)

    return parser


def load_run_config(path: Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        raw = path.read_text()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    return RunConfig.model_validate_json(raw)


def config_hash(args: argparse.Namespace, config: RunConfig) -> str:
    payload = {
        "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("config", "out")},
        "config": config.model_dump(),
    }
    blob = json.dumps(payload, sort_keys=True, cls=ReportEncoder)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _families(config: RunConfig) -> list[PatternFamily]:
    return [PatternFamily(f) for f in config.data.families]


def _with_mode(model: VisionDecoder, args: argparse.Namespace) -> VisionDecoder:
    """Same weights, with the local decoding mode changed from the command line."""
    updates = {}
    if getattr(args, "mode", None):
        updates["local_mode"] = args.mode
    if not updates:
        return model
    config = ModelConfig(**{**model.config.model_dump(), **updates})
    return VisionDecoder(config, store=model.store)


def _write_text(path: Path, text: str, report: RunReport) -> None:
    try:
        path.write_text(text)
    except OSError as e:
        raise FormatError(f"cannot write {path}: {e.strerror or e}") from e
    report.outputs.append(str(path))


def _write_grid(grid: TokenGrid, out: Path, report: RunReport) -> None:
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise FormatError(f"cannot create {out.parent}: {e.strerror or e}") from e
    report.outputs.append(str(write_nwit(grid, out.with_suffix(".nwit"))))
    codebook = Codebook(grid.dims.vocab)
    for frame, image in enumerate(codebook.decode_video(grid)):
        name = out.with_suffix(".ppm") if grid.dims.f == 1 else out.with_name(f"{out.stem}.f{frame}.ppm")
        report.outputs.append(str(write_ppm(image, name)))


def cmd_train(args, config: RunConfig, seed: int, report: RunReport) -> None:
    if args.data:
        examples = read_dataset(args.data)
        dims = examples[0][0].dims
        if any(grid.dims != dims for grid, _ in examples):
            raise DataError(f"grids in {args.data} do not share one shape")
        n_held = min(config.data.heldout, len(examples) // 4)
        data, heldout = examples[:len(examples) - n_held], examples[len(examples) - n_held:]
        captions = any(text is not None for _, text in examples)
        shape = (dims.h_p, dims.w_p, dims.f)
        fixed = {"m_side": dims.m_side, "vocab": dims.vocab}
    else:
        shape = args.grid or parse_grid(config.data.grid)
        captions = config.data.captions
        fixed = {}
    extent = args.extent or config.model.get("extent") or default_extent(
        Task.T2V if shape[2] > 1 else Task.UNCOND, GridDims(h_p=shape[0], w_p=shape[1], f=shape[2])
    )
    text = {"text_len": CAPTION_LEN, "text_vocab": len(WORDS)} if captions else {}
    model_config = config.model_settings(
        **text,
        **fixed,
        preset=args.preset,
        extent=extent,
        local_mode=args.mode,
        rpe_feed=args.rpe_feed,
        caches_enabled=False if args.no_caches else None,
        seed=seed,
    )
    if not args.data:
        dims = model_config.grid(*shape)
        data = synth_dataset(_families(config), config.data.count, dims, seed)
        heldout = synth_dataset(_families(config), config.data.heldout, dims, seed + 1) if config.data.heldout else []
    updates = {"seed": seed, "progress": config.train.progress and sys.stderr.isatty()}
    if args.steps:
        updates["steps"] = args.steps
    if args.batch_size:
        updates["batch_size"] = args.batch_size
    if args.loss:
        updates["loss_mode"] = args.loss
    if args.order:
        updates["orders"] = (args.order,)
    train_config = TrainConfig(**{**config.train.model_dump(), **updates})

    model = VisionDecoder(model_config)
    trainer = Trainer(model, train_config)
    history = trainer.fit(data, heldout)
    losses = [h["loss"] for h in history if "loss" in h]
    report.metrics.update(
        samples=len(losses) * train_config.batch_size,
        optimizer_steps=model.store.step_count,
        final_loss=losses[-1],
        untrained_baseline=math.log(model_config.vocab),
    )
    if heldout:
        report.metrics["heldout_ce"] = history[-1]["heldout_ce"]
    report.outputs.append(str(save_checkpoint(model, args.out or Path("ckpt"))))


def _generate(model: VisionDecoder, req: GenRequest, no_pool: bool, report: RunReport) -> TokenGrid:
    if no_pool:
        grid = reference_generate(model, req)
        report.metrics["pool"] = "none"
        return grid
    generator = Generator(model)
    grid = generator.generate(req)
    lane = generator.last_lane
    report.metrics.update(
        decode_passes=lane.passes,
        peak_pool_size=lane.pool.peak_size,
        peak_attended_tokens=max((s.attended_tokens for s in lane.pool.steps), default=0),
    )
    return grid


def _sampler(args) -> SamplerConfig:
    return SamplerConfig(kind=args.sampler, k=args.topk, temperature=args.temperature)


def cmd_generate(args, config: RunConfig, seed: int, report: RunReport) -> None:
    model = _with_mode(DecoderLoader().get_decoder(args.ckpt), args)
    dims = model.config.grid(*args.grid)
    text = tokenize_caption(args.text) if args.text is not None else None
    if text is None:
        task = Task.UNCOND
    else:
        task = Task.T2V if dims.f > 1 else Task.T2I
    req = GenRequest(task=task, dims=dims, text=text, sampler=_sampler(args), order=args.order, seed=seed)
    grid = _generate(model, req, args.no_pool, report)
    report.metrics.update(task=task.value, patches=dims.N, family=classify_pattern(grid).value)
    _write_grid(grid, args.out or Path("sample"), report)


def cmd_outpaint(args, config: RunConfig, seed: int, report: RunReport) -> None:
    model = _with_mode(DecoderLoader().get_decoder(args.ckpt), args)
    condition = read_nwit(args.data)
    model.config.check_dims(condition.dims)
    dims = model.config.grid(*args.target)
    row, col = args.place
    rect = PatchRect(row=row, col=col, rows=condition.dims.h_p, cols=condition.dims.w_p)
    req = GenRequest(
        task=Task.OUTPAINT, dims=dims, condition=condition, placement=rect,
        sampler=_sampler(args), order=args.order, seed=seed,
    )
    grid = _generate(model, req, args.no_pool, report)
    report.metrics.update(task=req.task.value, patches=dims.N, condition_patches=rect.rows * rect.cols)
    _write_grid(grid, args.out or Path("outpaint"), report)


def cmd_animate(args, config: RunConfig, seed: int, report: RunReport) -> None:
    model = _with_mode(DecoderLoader().get_decoder(args.ckpt), args)
    condition = read_nwit(args.data)
    model.config.check_dims(condition.dims)
    dims = model.config.grid(*args.grid)
    req = GenRequest(task=Task.ANIMATE, dims=dims, condition=condition, sampler=_sampler(args), order=args.order, seed=seed)
    grid = _generate(model, req, args.no_pool, report)
    report.metrics.update(task=req.task.value, patches=dims.N, frames=dims.f)
    _write_grid(grid, args.out or Path("animation"), report)


def _plan(args):
    h, w, f = args.grid
    if args.target is None:
        return split_base(GridDims(h_p=h, w_p=w, f=f), args.order)
    if f != 1:
        raise UsageError("outpainting conditions are single frames")
    th, tw, tf = args.target
    row, col = args.place or (0, 0)
    return split_outpaint(GridDims(h_p=th, w_p=tw, f=tf), PatchRect(row=row, col=col, rows=h, cols=w))


def cmd_plan_order(args, config: RunConfig, seed: int, report: RunReport) -> None:
    plan = _plan(args)
    print(render_plan(plan))
    report.metrics.update(patches=plan.dims.N, prefix_len=plan.prefix_len)
    if args.out:
        report.outputs.append(str(write_ppm(plan_heatmap(plan), args.out)))


def cmd_bench(args, config: RunConfig, seed: int, report: RunReport) -> None:
    plan = _plan(args)
    rows = bench_pool(plan, args.extent, no_pool=args.no_pool)
    if args.out:
        report.outputs.append(str(write_csv(rows, args.out)))
    else:
        sys.stdout.write(csv_text(rows))
    report.metrics.update(
        patches=plan.dims.N,
        peak_pool_size=max(r.pool_size for r in rows),
        peak_attended_tokens=max(r.attended_tokens for r in rows),
        total_attended_tokens=sum(r.attended_tokens for r in rows),
    )


def cmd_gradcheck(args, config: RunConfig, seed: int, report: RunReport) -> None:
    cases = args.cases or config.gradcheck_cases
    worst = run_gradchecks(cases=cases, seed=seed)
    for name, err in worst.items():
        print(f"{name:<16} {err:.3e} {'ok' if err <= GRADCHECK_TOLERANCE else 'FAIL'}")
    report.metrics.update(cases=cases, tolerance=GRADCHECK_TOLERANCE, worst=worst)
    if args.out:
        _write_text(args.out, json.dumps(worst, indent=1, sort_keys=True), report)
    failed = sorted(name for name, err in worst.items() if err > GRADCHECK_TOLERANCE)
    if failed:
        raise InvariantError(f"gradient check failed for {failed}")


def cmd_eval(args, config: RunConfig, seed: int, report: RunReport) -> None:
    model = DecoderLoader().get_decoder(args.ckpt)
    if args.data:
        data = read_dataset(args.data)
        if len({grid.dims for grid, _ in data}) > 1:
            raise DataError(f"grids in {args.data} do not share one shape")
    else:
        dims = model.config.grid(*(args.grid or parse_grid(config.data.grid)))
        data = synth_dataset(_families(config), max(config.data.heldout, 1), dims, seed + 1)
    trainer = Trainer(model, TrainConfig(seed=seed, progress=False))
    report.metrics.update(
        heldout_ce=trainer.eval_heldout(data),
        untrained_baseline=math.log(model.config.vocab),
        grids=len(data),
    )
    print(f"held-out cross-entropy {report.metrics['heldout_ce']:.4f} nats")


def cmd_ablate(args, config: RunConfig, seed: int, report: RunReport) -> None:
    rows = run_sweep(args.sweep, steps=args.steps or config.ablate_steps, seed=seed, families=config.data.families)
    for row in rows:
        print(f"{row.setting:<12} ce={row.heldout_ce:.4f} attended={row.peak_attended_tokens} steps={row.optimizer_steps}")
    report.metrics[args.sweep] = {row.setting: row.model_dump(exclude={"sweep", "setting"}) for row in rows}
    if args.out:
        _write_text(args.out, json.dumps([row.model_dump() for row in rows], indent=1), report)


COMMANDS = {
    "train": cmd_train,
    "generate": cmd_generate,
    "outpaint": cmd_outpaint,
    "animate": cmd_animate,
    "plan-order": cmd_plan_order,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def emit_report(report: RunReport, out: Path | None) -> None:
    line = json.dumps(report.model_dump(), sort_keys=True, cls=ReportEncoder)
    if out is not None:
        try:
            Path(f"{out}.report.json").write_text(line + "\n")
        except OSError as e:
            logger.error("cannot write run report next to %s: %s", out, e)
    print(line, file=sys.stderr)


def run(argv: list[str] | None = None) -> int:
    """Runs one command and returns its exit code; a run report is always printed to stderr."""
    argv = list(sys.argv[1:] if argv is None else argv)
    started = time.perf_counter()
    report = RunReport(command=argv[0] if argv else "", seed=0, config_hash="")
    args = None
    try:
        settings = RuntimeSettings.from_env()
        logging.basicConfig(level=settings.log_level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
        set_precision(settings.precision)
        args = build_parser().parse_args(argv)
        config = load_run_config(args.config)
        seed = args.seed if args.seed is not None else config.seed
        report.command, report.seed = args.command, seed
        report.config_hash = config_hash(args, config)
        COMMANDS[args.command](args, config, seed, report)
    except PatchloomError as e:
        logger.error("%s: %s", type(e).__name__, e)
        report.exit_code = e.exit_code
    except ValidationError as e:
        logger.error("invalid configuration: %s", e)
        report.exit_code = UsageError.exit_code
    except OSError as e:
        logger.error("I/O failure: %s", e)
        report.exit_code = DataError.exit_code
    except SystemExit as e:
        # --help
        report.exit_code = e.code if isinstance(e.code, int) else 0
    report.seconds = time.perf_counter() - started
    emit_report(report, getattr(args, "out", None))
    return report.exit_code


if __name__ == "__main__":
    sys.exit(run())
