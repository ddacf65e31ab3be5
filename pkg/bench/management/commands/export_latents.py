"""
Export task representations for external visualisation.

    python manage.py export_latents --checkpoint ... --preset testset-6 --rollouts 100
"""

from ...runner import export_latents_experiment
from ..base import ExperimentCommand, scenario_tasks


class Command(ExperimentCommand):
    help = "Roll out a checkpoint in each environment and write its latent samples and gate weights"

    def add_experiment_arguments(self, parser):
        parser.add_argument("--checkpoint", help="Checkpoint directory or meta_train run directory")
        parser.add_argument("--scenario", action="append", help="Scenario string (repeatable)")
        parser.add_argument("--rollouts", type=int, help="Rollouts per environment")

    def overrides(self, options):
        return {
            "checkpoint": options.get("checkpoint"),
            "tasks": scenario_tasks(options),
            "rollouts": options.get("rollouts"),
        }

    def run(self, config, progress):
        return export_latents_experiment(config, progress=progress)
