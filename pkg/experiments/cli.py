"""
Shared plumbing of the experiment commands: the common ``--config``,
``--out`` and ``--seed`` options and the mapping of errors to exit codes.
"""
import os

from django.conf import settings
from django.core.management import BaseCommand, CommandError

from experiments.config import ExperimentConfig, load_config
from games.exceptions import (
    ArgumentError,
    ConfigError,
    DatasetParseError,
    IterationLimitError,
    ManifestMismatchError,
    NumericError,
    TabularUnsupportedError
)

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

EXIT_CODES = (
    ((ConfigError, ArgumentError, ManifestMismatchError, TabularUnsupportedError), EXIT_CONFIG),
    ((NumericError, IterationLimitError), EXIT_NUMERIC),
    ((OSError, DatasetParseError), EXIT_IO),
)


class ExperimentCommand(BaseCommand):
    config_required = True

    def add_arguments(self, parser) -> None:
        parser.add_argument(
            "--config",
            required=self.config_required,
            help="Experiment config file (JSON)."
        )
        parser.add_argument(
            "--out",
            help="Output directory. Defaults to $MAMQL_OUT_DIR, then the "
                 "config's io.out, then the MAMQL_OUT_DIR setting."
        )
        parser.add_argument(
            "--seed",
            type=int,
            help="Run a single seed instead of the config's io.seeds."
        )

    def handle(self, *args, **options) -> None:
        try:
            if options["seed"] is not None and options["seed"] < 0:
                raise ConfigError("--seed must be non-negative.")
            config = load_config(options["config"]) if options["config"] else None
            self.run(config, self.out_dir(options, config), options)
        except CommandError:
            raise
        except Exception as error:
            for errors, code in EXIT_CODES:
                if isinstance(error, errors):
                    raise CommandError(str(error), returncode=code) from error
            raise

    @staticmethod
    def out_dir(options: dict, config: ExperimentConfig | None) -> str:
        if options["out"]:
            return options["out"]
        if os.environ.get("MAMQL_OUT_DIR"):
            return os.environ["MAMQL_OUT_DIR"]
        if config is not None and config.io.out:
            return config.io.out
        return settings.MAMQL_OUT_DIR

    def run(self, config: ExperimentConfig | None, out_dir: str, options: dict) -> None:
        raise NotImplementedError
