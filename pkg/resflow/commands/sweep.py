import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import click

from resflow.commands.build import build_with_schedule
from resflow.errors import ConfigError, ResflowError
from resflow.experiment import Experiment, prepare_experiment, sample_pair, with_seed
from resflow.measures import SWEEP_STREAM
from resflow.schemas import ScheduleKind, SweepPoint, SweepRow, SweepSummary
from resflow.storage import load_config, write_json, write_rows

SWEEP_COLUMNS = (
    "delta", "schedule", "n_predicted", "n_used", "epsilon", "safety_c", "achieved_ratio", "met_target", "error",
)
SCHEDULE_ORDER = (ScheduleKind.FIRST_ORDER, ScheduleKind.SECOND_ORDER)


def parse_deltas(text: str) -> List[float]:
    try:
        deltas = [float(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise ConfigError(f"Cannot parse --deltas {text!r}: {e}")
    if not deltas:
        raise ConfigError("--deltas must list at least one value.")
    if any(not 0 < d < 1 for d in deltas):
        raise ConfigError(f"Every delta must lie in (0, 1), got {deltas}.")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ConfigError(f"--deltas must be strictly decreasing, got {deltas}.")
    return deltas


def run_row(experiment: Experiment, index: int, delta: float, schedule: ScheduleKind) -> SweepRow:
    """One (delta, schedule) run; failures become a row-level error, never an abort."""
    config = experiment.config
    q0, p = sample_pair(config, config.n_particles, SWEEP_STREAM, index)
    try:
        _, report = build_with_schedule(experiment, q0, p, delta=delta, schedule=schedule)
    except ResflowError as e:
        logging.warning(f"Sweep row delta={delta!r} {schedule.value}: {e.detail}")
        return SweepRow(delta=delta, schedule=schedule, error=e.detail)
    plan = report.schedule
    return SweepRow(
        delta=delta,
        schedule=schedule,
        n_predicted=plan.n_blocks if plan is not None else 0,
        n_used=report.n_blocks,
        epsilon=plan.epsilon if plan is not None else None,
        safety_c=report.safety_c,
        achieved_ratio=report.achieved_ratio,
        met_target=report.met_target,
    )


def _run_row_task(args) -> SweepRow:
    return run_row(*args)


def run_sweep(
    experiment: Experiment,
    deltas: Sequence[float],
    workers: int = 1,
    schedules: Sequence[ScheduleKind] = SCHEDULE_ORDER,
) -> List[SweepRow]:
    tasks = [(experiment, i, delta, kind) for i, delta in enumerate(deltas) for kind in schedules]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            # map preserves task order
            return list(pool.map(_run_row_task, tasks))
    return [run_row(*task) for task in tasks]


def summarize_sweep(rows: Sequence[SweepRow]) -> SweepSummary:
    by_delta = {}
    for row in rows:
        by_delta.setdefault(row.delta, {})[row.schedule] = row
    points = []
    for delta, pair in by_delta.items():
        first = pair.get(ScheduleKind.FIRST_ORDER)
        second = pair.get(ScheduleKind.SECOND_ORDER)
        n1 = first.n_predicted if first is not None else None
        n2 = second.n_predicted if second is not None else None
        ratio = n2 / n1 if n1 and n2 is not None else None
        points.append(SweepPoint(delta=delta, n_first_order=n1, n_second_order=n2, block_ratio=ratio))

    ratios = [point.block_ratio for point in points]
    monotone = None not in ratios and all(b < a for a, b in zip(ratios, ratios[1:]))
    return SweepSummary(points=points, separation_monotone=monotone)


@click.command(name="sweep")
@click.argument("config_path", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--deltas", required=True, help="Comma-separated, strictly decreasing target ratios.")
@click.option(
    "--schedule",
    "schedule_name",
    type=click.Choice(["both"] + [kind.value for kind in SCHEDULE_ORDER]),
    default="both",
    show_default=True,
    help="Schedules to run for every delta.",
)
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True, help="Parallel sweep rows.")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=None, help="Output directory.")
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Override the config's master seed.")
@click.pass_context
def sweep_command(
    ctx: click.Context,
    config_path: Path,
    deltas: str,
    schedule_name: str,
    workers: int,
    out_dir: Optional[Path],
    seed: Optional[int],
):
    """Build under the selected schedules for every delta; write sweep.csv and sweep_summary.json."""
    config = with_seed(load_config(config_path), seed)
    delta_list = parse_deltas(deltas)
    out_dir = Path(out_dir or ctx.obj["out_dir"])

    schedules = SCHEDULE_ORDER if schedule_name == "both" else (ScheduleKind(schedule_name),)
    rows = run_sweep(prepare_experiment(config), delta_list, workers, schedules)
    write_rows(
        out_dir / config.output.sweep_csv,
        SWEEP_COLUMNS,
        ([getattr(row, column) for column in SWEEP_COLUMNS] for row in rows),
    )
    summary = summarize_sweep(rows)
    write_json(summary, out_dir / config.output.sweep_json)
    click.echo(f"rows={len(rows)} separation_monotone={str(summary.separation_monotone).lower()}")
