"""
Optimal sum throughput of each scenario.

    python manage.py oracle --preset testset-6
"""

from ...runner import oracle_experiment
from ..base import ExperimentCommand, scenario_tasks


class Command(ExperimentCommand):
    help = "Write the oracle throughput table (analytic or genie value iteration)"

    def add_experiment_arguments(self, parser):
        parser.add_argument("--scenario", action="append", help="Scenario string (repeatable)")

    def overrides(self, options):
        return {"tasks": scenario_tasks(options)}

    def run(self, config, progress):
        return oracle_experiment(config)
