"""
Meta-train the agent on a task set.

    python manage.py meta_train --preset trainset-8 --seeds 5
"""

from ...runner import meta_train_experiment
from ..base import ExperimentCommand, scenario_tasks


class Command(ExperimentCommand):
    help = "Meta-train the GMA agent on a task set and checkpoint it"

    def add_experiment_arguments(self, parser):
        parser.add_argument("--scenario", action="append", help="Training scenario (repeatable); overrides --preset")
        parser.add_argument("--episodes", type=int, help="Meta-training episodes")
        parser.add_argument("--experts", type=int, help="Number of experts M")
        parser.add_argument("--nu", type=float, help="Fairness factor for every task")

    def overrides(self, options):
        return {
            "tasks": scenario_tasks(options),
            "hyperparameters": {
                "episodes": options.get("episodes"),
                "num_experts": options.get("experts"),
                "nu": options.get("nu"),
            },
        }

    def run(self, config, progress):
        return meta_train_experiment(config, progress=progress)
