"""
CLI Engine - Main Command Line Interface

Primary entry point for running, sweeping, verifying and calibrating
energy-sharing scenarios.
"""
import sys
import click
from dataclasses import replace
from rich.console import Console
from pathlib import Path
from typing import Optional

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from core.config_manager import ConfigManager
from core.errors import GridshareError
from core.pricing import audit_settlement
from core.run_logger import RunLogger
from features.utils import ensure_directory, format_duration, parse_scales
from harness import reporting
from harness.scenario import GENERATION_TARGETS, calibrate_generation, load_scenario, run, sweep
from interface.terminal_ui import TerminalUI


console = Console()

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VERIFICATION_FAILED = 2


class CLIEngine:
    """Main CLI engine for the simulator."""

    def __init__(self):
        """Initialize CLI engine."""
        self.config_manager = None
        self.run_logger = None
        self.ui = TerminalUI(console)

    def initialize(self, config_dir: Optional[Path] = None):
        """Load configuration and open the run log.

        Args:
            config_dir: Optional custom configuration directory
        """
        try:
            self.config_manager = ConfigManager(config_dir)
            self.config_manager.initialize()
            self.run_logger = RunLogger(self.config_manager)
        except Exception as e:
            console.print(f"[red]Failed to initialize simulator: {e}[/red]")
            sys.exit(EXIT_ERROR)

    def output_directory(self, override: Optional[str]) -> Path:
        return ensure_directory(override or self.config_manager.get_setting('output.directory',
                                                                            'results'))

    @property
    def float_format(self) -> str:
        return self.config_manager.get_setting('output.float_format', reporting.DEFAULT_FLOAT_FORMAT)

    def fail(self, error: Exception, scenario: str = "") -> None:
        """Report an error and exit with the error status."""
        self.ui.print_error(str(error))
        self.run_logger.log_error(type(error).__name__, str(error), {'scenario': scenario})
        sys.exit(EXIT_ERROR)


# Create global CLI engine instance
cli_engine = CLIEngine()


def scenario_input(command):
    """Accept the scenario file as an argument or through ``--scenario``."""
    command = click.option('--scenario', 'scenario_option',
                           type=click.Path(exists=True, dir_okay=False),
                           help='Scenario file')(command)
    return click.argument('scenario_file', required=False,
                          type=click.Path(exists=True, dir_okay=False))(command)


def resolve_scenario(scenario_file: Optional[str], scenario_option: Optional[str]) -> str:
    if scenario_file and scenario_option:
        raise click.UsageError("give the scenario either as an argument or with --scenario")
    if not (scenario_file or scenario_option):
        raise click.UsageError("missing scenario file (argument or --scenario)")
    return scenario_file or scenario_option


@click.group()
@click.option('--config-dir', type=click.Path(), help='Custom configuration directory')
def cli(config_dir):
    """Gridshare Simulator

    Network-aware energy sharing for net-metered prosumer coalitions on
    radial distribution feeders.
    """
    cli_engine.initialize(Path(config_dir) if config_dir else None)


@cli.command('run')
@scenario_input
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), help='Output directory')
@click.option('--trace', is_flag=True, help='Record per-iteration solver residuals')
@click.option('--show-prices', is_flag=True, help='Print the announced bus prices')
def run_command(scenario_file: Optional[str], scenario_option: Optional[str],
                out_dir: Optional[str], trace: bool, show_prices: bool):
    """Run one scenario and write its result files.

    \b
    Examples:
        gridshare run resources/scenarios/ieee13_s1.json
        gridshare run ieee13_s4.json --trace --out results/s4
    """
    scenario_file = resolve_scenario(scenario_file, scenario_option)
    name = Path(scenario_file).stem
    try:
        sc = load_scenario(scenario_file)
        name = sc.name
        if trace:
            sc = replace(sc, options=replace(sc.options, trace=True))

        settings = cli_engine.config_manager.solver_settings()
        tol = cli_engine.config_manager.verification_tolerance()
        result = run(sc, settings, tol)

        written = reporting.write_run(result, cli_engine.output_directory(out_dir),
                                      cli_engine.float_format)
        info = reporting.summary(result)
        cli_engine.run_logger.log_solver(sc.name, result.regime.value, info['solver'])
        cli_engine.run_logger.log_run(sc.name, result.g_scale, result.regime.value,
                                      result.welfare, result.passed)

        cli_engine.ui.print_run_summary(info)
        if show_prices:
            cli_engine.ui.print_frame("Bus prices", reporting.schedule_frame(result),
                                      ['bus', 'bus_name', 'price_usd_per_kwh', 'Z_kwh'])
        cli_engine.ui.print_info(f"{len(written)} files written in "
                                 f"{format_duration(result.elapsed)}")
        if not result.passed:
            cli_engine.ui.print_warning("verification failed, see the summary file")
    except GridshareError as e:
        cli_engine.fail(e, name)


@cli.command('sweep')
@scenario_input
@click.option('--scales', required=True, help='Comma list or start:stop:count range')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), help='Output directory')
@click.option('--workers', type=int, default=None, help='Parallel runs (default from config)')
def sweep_command(scenario_file: Optional[str], scenario_option: Optional[str],
                  scales: str, out_dir: Optional[str],
                  workers: Optional[int]):
    """Run a scenario over a range of generation scales.

    \b
    Examples:
        gridshare sweep ieee13_s1.json --scales 0:2:21
        gridshare sweep ieee13_s1.json --scales 0,0.5,1.0
    """
    scenario_file = resolve_scenario(scenario_file, scenario_option)
    name = Path(scenario_file).stem
    try:
        sc = load_scenario(scenario_file)
        name = sc.name
        g_scales = parse_scales(scales)
        settings = cli_engine.config_manager.solver_settings()
        tol = cli_engine.config_manager.verification_tolerance()
        workers = workers or int(cli_engine.config_manager.get_setting('sweep.workers', 1))

        errors = []
        results = sweep(sc, g_scales, settings, tol, errors=errors, workers=workers,
                        progress=True)
        path = reporting.write_sweep(sc.name, results, errors,
                                     cli_engine.output_directory(out_dir),
                                     cli_engine.float_format)

        frame = reporting.sweep_frame(results)
        if not frame.empty:
            cli_engine.ui.print_frame(f"Sweep {sc.name}", frame,
                                      ['g_scale', 'regime', 'welfare_usd',
                                       'min_price_usd_per_kwh', 'max_price_usd_per_kwh',
                                       'passed'])
        for scale, error in errors:
            cli_engine.run_logger.log_error(type(error).__name__, str(error),
                                            {'scenario': sc.name, 'g_scale': scale})
            cli_engine.ui.print_warning(f"g_scale={scale:g}: {error}")
        cli_engine.ui.print_success(f"{len(results)}/{len(g_scales)} runs written to {path}")
    except GridshareError as e:
        cli_engine.fail(e, name)


@cli.command('verify')
@scenario_input
@click.option('--tol', type=float, default=None, help='Override the verification tolerance')
def verify_command(scenario_file: Optional[str], scenario_option: Optional[str],
                   tol: Optional[float]):
    """Check KKT conditions, the decentralized equilibrium and budget neutrality.

    Exits 0 when every check passes, 2 when a check fails, 1 on errors.
    """
    scenario_file = resolve_scenario(scenario_file, scenario_option)
    name = Path(scenario_file).stem
    try:
        sc = load_scenario(scenario_file)
        name = sc.name
        settings = cli_engine.config_manager.solver_settings()
        tol = tol if tol is not None else cli_engine.config_manager.verification_tolerance()
        result = run(sc, settings, tol)
    except GridshareError as e:
        cli_engine.fail(e, name)
        return

    audit = audit_settlement(result.settlement)
    checks = [
        ("KKT conditions", result.kkt.passed, f"complementarity {result.kkt.max_complementarity:.2e}"),
        ("Decentralized equilibrium", result.equilibrium.passed,
         f"max deviation {result.equilibrium.max_deviation:.2e} kWh"),
        ("Budget neutrality", audit.neutral,
         f"operator balance {audit.operator_balance:.2e} $ (bound {audit.neutrality_bound:.1e})"),
        ("Payment uniformity", audit.uniform,
         f"max gap to the tariff price {audit.max_uniformity_gap:.2e} $"),
    ]
    table = cli_engine.ui.create_table(f"Verification {sc.name} (tol {tol:g})",
                                       [("Check", "cyan"), ("Result", "white"),
                                        ("Detail", "white")])
    for label, ok, detail in checks:
        table.add_row(label, "[green]pass[/green]" if ok else "[red]FAIL[/red]", detail)
    cli_engine.ui.print_table(table)

    passed = all(ok for _, ok, _ in checks)
    cli_engine.run_logger.log_verification(sc.name, passed, {
        label: detail for label, _, detail in checks
    })
    sys.exit(EXIT_OK if passed else EXIT_VERIFICATION_FAILED)


@cli.command('calibrate')
@scenario_input
@click.option('--target', type=click.Choice(GENERATION_TARGETS), required=True,
              help='Regime to reach')
def calibrate_command(scenario_file: Optional[str], scenario_option: Optional[str],
                      target: str):
    """Find the generation scale that puts a scenario in a given regime."""
    scenario_file = resolve_scenario(scenario_file, scenario_option)
    name = Path(scenario_file).stem
    try:
        sc = load_scenario(scenario_file)
        name = sc.name
        scale = calibrate_generation(sc, target, cli_engine.config_manager.solver_settings())
        cli_engine.ui.print_success(f"{sc.name}: g_scale = {scale:.6g} for {target}")
    except GridshareError as e:
        cli_engine.fail(e, name)


@cli.command('show-config')
def show_config():
    """Display the effective configuration."""
    config = cli_engine.config_manager.load_config()
    table = cli_engine.ui.create_table("Configuration", [("Setting", "cyan"), ("Value", "green")])
    for section, values in config.items():
        if isinstance(values, dict):
            for key, value in values.items():
                table.add_row(f"{section}.{key}", str(value))
        else:
            table.add_row(section, str(values))
    cli_engine.ui.print_table(table)
    cli_engine.ui.print_info(f"Config file: {cli_engine.config_manager.config_file}")


@cli.command('logs')
@click.option('--count', type=int, default=20, help='Number of entries')
def logs(count: int):
    """Show recent run log entries."""
    entries = cli_engine.run_logger.get_recent_logs(count)
    if not entries:
        cli_engine.ui.print_info("No log entries yet")
        return
    for entry in entries:
        console.print(entry, markup=False, highlight=False)


def main(args: Optional[list] = None):
    """Main entry point.

    Usage errors exit with status 1; status 2 is reserved for failed
    verifications.
    """
    try:
        cli.main(args=args, prog_name='gridshare', standalone_mode=False)
    except click.ClickException as e:
        e.show()
        sys.exit(EXIT_ERROR)
    except (KeyboardInterrupt, click.Abort):
        console.print("\n[yellow]Interrupted by user[/yellow]")
        sys.exit(0)
    except Exception as e:
        console.print(f"[red]Fatal error: {e}[/red]")
        sys.exit(EXIT_ERROR)


if __name__ == '__main__':
    main()
