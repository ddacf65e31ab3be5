"""
Shared plumbing of the experiment commands.
"""

import json

from django.core.management.base import BaseCommand, CommandError
from pydantic import ValidationError

from channel.exceptions import GmaError

from ..records import RunRecord
from ..runner import progress_enabled
from ..serializers import ExperimentConfig


class ExperimentCommand(BaseCommand):
    """
    Base for commands that resolve an ``ExperimentConfig`` from an optional
    ``--config`` file plus command-line overrides and write one run directory.
    Subclasses add their own flags and implement ``run``.
    """

    default_seeds = 1

    def add_arguments(self, parser):
        parser.add_argument("--config", help="JSON or YAML experiment file")
        parser.add_argument("--seed", type=int, help="Base seed")
        parser.add_argument("--seeds", type=int, help="Number of consecutive seeds")
        parser.add_argument("--out", help="Root directory for run directories")
        parser.add_argument("--preset", help="Named task set or change schedule")
        parser.add_argument("--no-progress", action="store_true", help="Hide progress bars")
        self.add_experiment_arguments(parser)

    def add_experiment_arguments(self, parser):
        pass

    def overrides(self, options) -> dict:
        """Command-specific config overrides; None values are ignored."""
        return {}

    def build_config(self, options) -> ExperimentConfig:
        config = ExperimentConfig.load(options["config"]) if options.get("config") else ExperimentConfig()
        seeds = options.get("seeds")
        if seeds is None and "seeds" not in config.model_fields_set:
            seeds = self.default_seeds
        return config.with_overrides(
            seed=options.get("seed"),
            seeds=seeds,
            output_dir=options.get("out"),
            preset=options.get("preset"),
            **self.overrides(options),
        )

    def run(self, config: ExperimentConfig, progress: bool) -> RunRecord:
        raise NotImplementedError

    def handle(self, *args, **options):
        progress = progress_enabled() and not options.get("no_progress")
        try:
            config = self.build_config(options)
            record = self.run(config, progress)
        except ValidationError as e:
            raise CommandError(f"Invalid configuration:\n{e}")
        except GmaError as e:
            raise CommandError(f"[{e.code}] {e.message}")

        self.stdout.write(json.dumps(record.summary, indent=2, sort_keys=True, default=str))
        self.stdout.write(self.style.SUCCESS(f"Results written to {record.directory}"))


def scenario_tasks(options) -> list:
    """``--scenario`` values as task records, or None when none were given."""
    scenarios = options.get("scenario") or []
    return [{"scenario": text} for text in scenarios] or None
