"""
Play a fixed agent policy against one or more scenarios.

    python manage.py simulate --scenario tdma:5 --policy never --slots 10000
"""

from ...runner import simulate_experiment
from ..base import ExperimentCommand, scenario_tasks


class Command(ExperimentCommand):
    help = "Simulate the channel with a fixed agent policy and write the slot trace and rolling metrics"

    def add_experiment_arguments(self, parser):
        parser.add_argument("--scenario", action="append", help="Scenario string, e.g. tdma:2+qaloha:0.1 (repeatable)")
        parser.add_argument("--policy", choices=["always", "never", "random", "oracle"], help="Agent policy")
        parser.add_argument("--slots", type=int, help="Number of slots")

    def overrides(self, options):
        return {
            "tasks": scenario_tasks(options),
            "policy": options.get("policy"),
            "slots": options.get("slots"),
        }

    def run(self, config, progress):
        return simulate_experiment(config, progress=progress)
