import argparse
import json
import logging
import sys

from .agents import NoBracketError
from .config import ConfigError, load
from .harness import AnalysisError, Harness, NumericalError
from .utils import parse_seed

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class ArgumentParser(argparse.ArgumentParser):
    """
    Raises instead of exiting so bad arguments map to the validation exit code.
    """

    def error(self, message):
        raise ConfigError(message)


class CommandLineInterface:
    """
    Acts as the main CLI entry point for running simulations.
    """

    description = "Agent-based derivatives market simulator"

    harness_class = Harness

    def __init__(self):
        self.parser = ArgumentParser(description=self.description)
        self.parser.add_argument(
            "-v",
            "--verbosity",
            type=int,
            choices=[0, 1, 2, 3],
            help="How verbose to make the output",
            default=1,
        )
        self.parser.add_argument(
            "--log-fmt",
            help="Log format to use",
            default="%(asctime)-15s %(levelname)-8s %(message)s",
        )
        self.parser.add_argument(
            "--set",
            dest="overrides",
            action="append",
            metavar="KEY=VALUE",
            help="Override a config key (repeatable)",
            default=[],
        )
        commands = self.parser.add_subparsers(dest="command", required=True)

        simulate = commands.add_parser("simulate", help="Run one market")
        simulate.add_argument("--config", required=True, help="Config file")
        simulate.add_argument(
            "--seed", type=parse_seed, default=None, help="Run seed (u64)"
        )
        simulate.add_argument("--out", default=None, help="Output directory")

        ensemble = commands.add_parser("ensemble", help="Run a seeded ensemble")
        ensemble.add_argument("--config", required=True, help="Config file")
        ensemble.add_argument("--runs", type=int, required=True, help="Number of runs")
        ensemble.add_argument("--out", default=None, help="Output directory")

        sweep = commands.add_parser("sweep", help="Run one ensemble per parameter value")
        sweep.add_argument("--config", required=True, help="Config file")
        sweep.add_argument("--param", required=True, help="Dotted config key to vary")
        sweep.add_argument(
            "--values", required=True, help="Comma separated values for --param"
        )
        sweep.add_argument("--runs", type=int, default=1, help="Runs per value")
        sweep.add_argument("--out", default=None, help="Output directory")

        analyze = commands.add_parser("analyze", help="Statistics from step CSVs")
        analyze.add_argument("--in", dest="inputs", nargs="+", required=True)
        analyze.add_argument("--out", default="-", help="Output file (- for stdout)")
        analyze.add_argument("--returns", choices=["diff", "log"], default="diff")
        analyze.add_argument("--tail-z", type=float, default=3.0)

        girsanov = commands.add_parser(
            "girsanov-check", help="Measure-change diagnostic for the underlying"
        )
        girsanov.add_argument("--drift", type=float, required=True)
        girsanov.add_argument("--h", type=float, required=True)
        girsanov.add_argument("--paths", type=int, required=True)
        girsanov.add_argument("--steps", type=int, required=True)
        girsanov.add_argument("--seed", type=parse_seed, default=0)
        girsanov.add_argument("--horizon", type=float, default=1.0)
        girsanov.add_argument("--z0", type=float, default=5.0)
        girsanov.add_argument("--sigma", type=float, default=1.0)

        self.harness = None

    @classmethod
    def entrypoint(cls):
        """
        Main entrypoint for external starts.
        """
        sys.exit(cls().run(sys.argv[1:]))

    def run(self, args):
        """
        Pass in raw argument list and it will decode them, run the command
        and return the exit code.
        """
        try:
            args = self.parser.parse_args(args)
        except ConfigError as e:
            print("error: %s" % e, file=sys.stderr)
            return EXIT_VALIDATION
        logging.basicConfig(
            level={
                0: logging.WARN,
                1: logging.INFO,
                2: logging.DEBUG,
                3: logging.DEBUG,
            }[args.verbosity],
            format=args.log_fmt,
        )
        self.harness = self.harness_class()
        try:
            getattr(self, "command_" + args.command.replace("-", "_"))(args)
        except (ConfigError, AnalysisError) as e:
            logger.error("%s", e)
            return EXIT_VALIDATION
        except (NoBracketError, NumericalError) as e:
            logger.error("Numerical failure: %s", e)
            return EXIT_NUMERICAL
        return EXIT_OK

    def load_config(self, args):
        overrides = {}
        for item in args.overrides:
            if "=" not in item:
                raise ConfigError("--set expects KEY=VALUE, got %r" % item)
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        try:
            return load(args.config, overrides)
        except OSError as e:
            raise ConfigError("cannot read config %s: %s" % (args.config, e)) from e

    def command_simulate(self, args):
        config = self.load_config(args)
        self.harness.run_simulation(config, args.seed, args.out or config.out)

    def command_ensemble(self, args):
        config = self.load_config(args)
        if args.runs < 1:
            raise ConfigError("--runs must be >= 1")
        self.harness.run_ensemble(config, args.runs, args.out or config.out)

    def command_sweep(self, args):
        config = self.load_config(args)
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError("--values is empty")
        if args.runs < 1:
            raise ConfigError("--runs must be >= 1")
        self.harness.sweep(config, args.param, values, args.runs, args.out or config.out)

    def command_analyze(self, args):
        result = self.harness.analyze(args.inputs, args.returns, args.tail_z)
        text = json.dumps(result, sort_keys=True, indent=2)
        if args.out == "-":
            print(text)
        else:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
            logger.info("Wrote %s", args.out)

    def command_girsanov_check(self, args):
        if args.paths < 2 or args.steps < 1:
            raise ConfigError("girsanov-check needs --paths >= 2 and --steps >= 1")
        try:
            report = self.harness.girsanov_check(
                args.drift,
                args.h,
                args.paths,
                args.steps,
                args.seed,
                horizon=args.horizon,
                z0=args.z0,
                sigma=args.sigma,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from e
        diagnostic = report["diagnostic"]
        print(
            "novikov E[exp(<L>_T/2)] = %.17g (%s)"
            % (
                report["novikov_value"],
                "finite" if report["novikov_holds"] else "infinite",
            )
        )
        for c in diagnostic.checkpoints:
            print(
                "t=%.6g  E_Q[Z]=%.10f  se=%.3g  drift-free=%s  "
                "E_P[density]=%.10f  se=%.3g  martingale=%s"
                % (
                    c.time,
                    c.weighted_mean,
                    c.standard_error,
                    "yes" if c.passed else "no",
                    c.mean_density,
                    c.density_standard_error,
                    "yes" if c.density_passed else "no",
                )
            )
        passed = diagnostic.passed and diagnostic.density_passed
        print("overall: %s" % ("PASS" if passed else "FAIL"))
