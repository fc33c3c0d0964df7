import sys
import logging
import argparse
from loguru import logger

# 1. SILENCE NOISY LOGS IMMEDIATELY (Before any other imports)
logger.remove()
from rich.logging import RichHandler
logger.add(RichHandler(show_time=False, show_level=False, markup=True), level="INFO", format="{message}")

logging.getLogger("asyncio").setLevel(logging.CRITICAL)
logging.getLogger("concurrent.futures").setLevel(logging.CRITICAL)

import asyncio
from rich.console import Console
from rich.panel import Panel
from rich.progress import Progress
from rich.table import Table

from base_emitter import EmitContext, EmitterCollection, format_value
from config import Settings
from emitters import load_emitters
from event_bus import POINT_FINISHED, POINT_STARTED, bus
from imbedding import IIParams, integrate, nac_tl_statistics
from monitoring import RunMonitor
from schema import GateFailure, TransportError
from sweep import CUTOFF_WARNING, check_winner_stability, emit_outputs, run_sweep

EXIT_OK = 0
EXIT_BAD_INPUT = 1
EXIT_GATE = 2
EXIT_IO = 3

console = Console()


def configure_logging(settings: Settings, verbose: bool = False):
    logger.remove()
    level = "DEBUG" if verbose else settings.logging.level
    logger.add(RichHandler(show_time=False, show_level=False, markup=True), level=level, format="{message}")
    if settings.logging.file:
        logger.add(settings.logging.file, level="DEBUG")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="main.py",
        description="Compare Monte Carlo estimation procedures for particle-plasma source terms.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", help="run all procedures over a parameter grid")
    sw.add_argument("--config", help="toml configuration (default: config.toml next to main.py)")
    sw.add_argument("--preset", choices=["default", "momentum-high-survival"], help="start from a named preset instead of a file")
    sw.add_argument("--out", help="output directory")
    sw.add_argument("--seed", type=int, help="master seed")
    sw.add_argument("--threads", type=int, help="worker processes")
    sw.add_argument("--dump-traces", action="store_true", help="write event traces of the first paths")
    sw.add_argument("--common-random-numbers", action="store_true", help="share paths between procedures of one simulation type")
    sw.add_argument("--check-stability", action="store_true", help="rerun 3 conclusive points at twice the particles")
    sw.add_argument("-v", "--verbose", action="store_true")

    im = sub.add_parser("imbed", help="integrate the moment equations of the nac track-length score")
    im.add_argument("--survival", type=float, required=True)
    im.add_argument("--collisionality", type=float, required=True)
    im.add_argument("--pr", type=float, required=True)
    im.add_argument("--length", type=float, default=1.0)
    im.add_argument("--score-sigma", choices=["total", "absorb", "scatter"], default="total")
    im.add_argument("--closure", choices=["derived", "printed"], default="derived")
    im.add_argument("--config", help="toml configuration for the [imbedding] section")
    im.add_argument("--out", help="output directory")
    im.add_argument("-v", "--verbose", action="store_true")
    return parser


def load_settings(args) -> Settings:
    if getattr(args, "preset", None):
        return Settings.preset(args.preset)
    if args.config:
        return Settings.load(args.config, strict=True)
    return Settings.load()


def summary_table(pmap) -> Table:
    table = Table(title=f"{pmap.settings.sweep.quantity.value} / {pmap.settings.sweep.metric.value}")
    table.add_column("point")
    table.add_column("winner")
    table.add_column("gain", justify="right")
    table.add_column("gate")
    for outcome in pmap.points:
        sel = outcome.selection
        if outcome.error:
            winner = f"[red]{outcome.error}[/red]"
        elif sel is None:
            winner = "-"
        else:
            winner = sel.best or f"[dim]inconclusive ({sel.leader})[/dim]"
        gate = "[green]ok[/green]" if outcome.passed else "[red]FAIL[/red]"
        table.add_row(outcome.point.label(), winner, format_value(outcome.gain), gate)
    return table


async def sweep_command(args) -> int:
    settings = load_settings(args)
    settings = settings.with_overrides(
        seed=args.seed,
        threads=args.threads,
        common_random_numbers=True if args.common_random_numbers else None,
    )
    if args.out or args.dump_traces:
        data = settings.model_dump()
        if args.out:
            data["output"]["directory"] = args.out
        if args.dump_traces:
            data["output"]["dump_traces"] = True
        settings = Settings(**data)
    configure_logging(settings, args.verbose)

    sweep = settings.sweep
    console.print(Panel.fit(
        f"[bold green]Estimation procedure sweep[/bold green]\n"
        f"[dim]{sweep.setting.value} | {sweep.quantity.value} | {sweep.metric.value}[/dim]\n\n"
        f"N = [cyan]{sweep.particles:,}[/cyan], R = [cyan]{sweep.repetitions}[/cyan], "
        f"seed = [yellow]{sweep.seed}[/yellow], workers = [magenta]{sweep.threads}[/magenta]",
        border_style="green",
        padding=(1, 2)
    ))

    monitor = RunMonitor()
    with Progress(console=console, transient=True) as progress:
        task_id = progress.add_task("sweeping", total=None)

        async def on_event(event: dict):
            if event["type"] == POINT_STARTED:
                progress.update(task_id, total=event["total"], description=event["content"])
            else:
                progress.advance(task_id)

        bus.subscribe(on_event, types=[POINT_STARTED, POINT_FINISHED])
        try:
            pmap = await run_sweep(settings, monitor)
        finally:
            bus.unsubscribe(on_event)

    console.print(summary_table(pmap))
    for proc in monitor.session_stats["by_procedure"]:
        if monitor.cutoff_fraction(proc) > CUTOFF_WARNING:
            logger.warning(f"{proc}: {monitor.cutoff_fraction(proc):.2%} of all paths ended at the weight cutoff")

    if args.check_stability:
        for text in check_winner_stability(pmap):
            logger.warning(f"Winner changed at 2N: {text}")

    results = await emit_outputs(pmap, settings)
    console.print(f"\n[dim]{monitor.get_summary()}[/dim]")
    if any(r.error for r in results.values()):
        return EXIT_IO
    try:
        pmap.require_passed()
    except GateFailure as e:
        logger.error(f"Sweep failed: {e}")
        return EXIT_GATE
    return EXIT_OK


async def imbed_command(args) -> int:
    settings = load_settings(args)
    configure_logging(settings, args.verbose)
    if args.length <= 0 or args.collisionality <= 0:
        logger.error("length and collisionality must be positive")
        return EXIT_BAD_INPUT
    sigma_t = args.collisionality / args.length
    params = IIParams(
        sigma_a=(1.0 - args.survival) * sigma_t,
        sigma_s=args.survival * sigma_t,
        pr=args.pr,
        score=args.score_sigma,
        closure=args.closure,
    )
    cfg = settings.imbedding
    traj = integrate(params, args.length, cfg.dx, rtol=cfg.rtol, max_halvings=cfg.max_halvings)
    traj.check()

    final = traj.final()
    score = nac_tl_statistics(traj)
    console.print(Panel.fit(
        f"P_ll = [cyan]{final.p_ll:.10g}[/cyan]   P_lr = [cyan]{final.p_lr:.10g}[/cyan]\n"
        f"E[T] = [green]{score['mean'][-1]:.10g}[/green]   Var[T] = [green]{score['variance'][-1]:.10g}[/green]\n"
        f"[dim]{traj.steps} steps after {traj.halvings} halvings[/dim]",
        title="nac track-length moments",
        border_style="green",
    ))

    collection = EmitterCollection(*load_emitters(["trajectory_csv", "manifest"]))
    ctx = EmitContext(settings=settings, out_dir=args.out or settings.output.directory, trajectory=traj)
    results = await collection.emit_all(ctx)
    for name, result in results.items():
        if result.error:
            logger.error(f"Output {name} failed: {result.error}")
        elif result.output:
            logger.info(f"Wrote {result.output}")
    return EXIT_IO if any(r.error for r in results.values()) else EXIT_OK


async def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "sweep":
            return await sweep_command(args)
        return await imbed_command(args)
    except (TransportError, ValueError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_BAD_INPUT
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        return EXIT_IO


if __name__ == "__main__":
    try:
        sys.exit(asyncio.run(main()))
    except (KeyboardInterrupt, asyncio.CancelledError):
        console.print("\n[dim]Interrupted by user.[/dim]")
        sys.exit(130)
