"""Command-line surface: run scenarios, sweep a parameter, list policies.

Exit codes: 0 success, 2 configuration error, 3 I/O error.  The only
machine-readable success output of `run` is the final `verdict=...` line.
"""
from __future__ import annotations

import sys
from typing import Optional

import click

from .config import (
    ConfigError,
    LAYER_POLICIES,
    apply_overrides,
    build_scenario,
    canonical_config,
    dump_config,
    load_config,
    resolve_axis,
)
from .metrics import write_summary, write_trace
from .scenarios import run_scenario

EXIT_CONFIG_ERROR = 2
EXIT_IO_ERROR = 3


@click.group()
def main() -> None:
    """Retransmission-timeout experiment runner."""


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _gather(config_path: Optional[str], overrides: tuple[str, ...],
            seed: Optional[int], scenario: Optional[str]) -> dict[str, str]:
    config: dict[str, str] = {}
    if config_path is not None:
        try:
            config = load_config(config_path)
        except OSError as exc:
            _fail(EXIT_IO_ERROR, f"cannot read config: {exc}")
    config = apply_overrides(config, overrides)
    if seed is not None:
        config["seed"] = str(seed)
    if scenario is not None:
        config["scenario"] = scenario
    return config


@main.command()
@click.argument("scenario", required=False)
@click.option("--config", "config_path", metavar="PATH",
              help="Config file (flat key = value).")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override one config key; repeatable.")
@click.option("--trace", "trace_path", metavar="PATH",
              help="Write the event trace CSV here.")
@click.option("--summary", "summary_path", metavar="PATH",
              help="Write the key=value summary here.")
@click.option("--seed", type=int, default=None, help="Random seed.")
@click.option("--dump-config", "dump", is_flag=True,
              help="Print the effective config and exit without running.")
def run(scenario: Optional[str], config_path: Optional[str],
        overrides: tuple[str, ...], trace_path: Optional[str],
        summary_path: Optional[str], seed: Optional[int],
        dump: bool) -> None:
    """Run one scenario and print its verdict."""
    try:
        config = _gather(config_path, overrides, seed, scenario)
        built = build_scenario(config)
    except ConfigError as exc:
        _fail(EXIT_CONFIG_ERROR, str(exc))
    if dump:
        click.echo(dump_config(canonical_config(built)), nl=False)
        return
    result = run_scenario(built)
    try:
        if trace_path is not None:
            write_trace(result.rows, trace_path)
        if summary_path is not None:
            write_summary(result.summary, summary_path)
    except OSError as exc:
        _fail(EXIT_IO_ERROR, f"cannot write output: {exc}")
    click.echo(f"verdict={result.summary.verdict}")


@main.command()
@click.argument("scenario", required=False)
@click.option("--config", "config_path", metavar="PATH",
              help="Config file (flat key = value).")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override one config key; repeatable.")
@click.option("--summary", "summary_path", metavar="PATH",
              help="Also write the CSV table here.")
@click.option("--seed", type=int, default=None,
              help="Random seed (required for sweeps).")
@click.option("--dump-config", "dump", is_flag=True,
              help="Print the effective config and exit without running.")
def sweep(scenario: Optional[str], config_path: Optional[str],
          overrides: tuple[str, ...], summary_path: Optional[str],
          seed: Optional[int], dump: bool) -> None:
    """Run a scenario once per axis value and print a CSV table.

    The axis is named by config keys, e.g.:
    --set axis.param=p --set axis.values=0.05,0.1,0.2
    """
    try:
        config = _gather(config_path, overrides, seed, scenario)
        if "seed" not in config:
            raise ConfigError("sweeps need an explicit seed (--seed)")
        axis_key, values = resolve_axis(config)
        base = {key: value for key, value in config.items()
                if not key.startswith("axis.")}
        if dump:
            built = build_scenario(base)
            effective = canonical_config(built)
            effective["axis.param"] = config["axis.param"]
            effective["axis.values"] = config["axis.values"]
            click.echo(dump_config(effective), nl=False)
            return
        table = ["param,verdict,final_e,throughput,duplicates"]
        for numeric, raw in sorted(values, key=lambda pair: pair[0]):
            cell_config = dict(base)
            cell_config[axis_key] = raw
            built = build_scenario(cell_config)
            summary = run_scenario(built).summary
            table.append(f"{numeric:g},{summary.verdict},"
                         f"{summary.final_e:.6f},{summary.throughput:.6f},"
                         f"{summary.duplicates_received}")
    except ConfigError as exc:
        _fail(EXIT_CONFIG_ERROR, str(exc))
    text = "\n".join(table) + "\n"
    click.echo(text, nl=False)
    if summary_path is not None:
        try:
            with open(summary_path, "w", encoding="ascii") as fh:
                fh.write(text)
        except OSError as exc:
            _fail(EXIT_IO_ERROR, f"cannot write output: {exc}")


@main.command("list-policies")
def list_policies() -> None:
    """Print every policy identifier, grouped by layer."""
    for layer in range(1, 6):
        registry = LAYER_POLICIES[layer]
        click.echo(f"layer{layer}: " + " ".join(registry))
        for ident, (_, params) in registry.items():
            if params:
                click.echo(f"  {ident}: " + " ".join(params))


if __name__ == "__main__":
    main()
