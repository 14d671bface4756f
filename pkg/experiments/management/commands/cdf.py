import sys

from django.core.management.base import BaseCommand, CommandError

from core.exceptions import CdfError
from experiments.configs import load_config
from experiments.pipeline import STEPS, Pipeline


class Command(BaseCommand):
    """
    Run one step of a cascaded deep factorization experiment.

    Example:
        python manage.py cdf synth-data --config configs/default.yaml
        python manage.py cdf train-phone --config configs/default.yaml --seed 3

    Exit codes: 0 success, 1 usage or config error, 2 missing upstream
    artifact, 3 runtime failure.
    """

    help = "Run one step of a cascaded deep factorization experiment."
    requires_system_checks = []

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        # Usage errors raise CommandError (exit 1) instead of argparse's exit 2,
        # which is reserved for cascade order violations.
        parser.called_from_command_line = False
        return parser

    def add_arguments(self, parser):
        parser.add_argument("step", choices=STEPS, help="Pipeline step to run.")
        parser.add_argument("--config", required=True, help="Experiment YAML file.")
        parser.add_argument("--seed", type=int, help="Override the global seed.")
        parser.add_argument("--workspace", help="Override the workspace directory.")
        parser.add_argument(
            "--paper-scale",
            action="store_true",
            help="Use the published layer sizes instead of the desk-scale defaults.",
        )
        parser.add_argument(
            "--force",
            action="store_true",
            help="Let `report` mix artifacts produced under different config hashes.",
        )

    def run_from_argv(self, argv):
        try:
            super().run_from_argv(argv)
        except CommandError as exc:
            self.stderr.write(f"error: {exc}")
            sys.exit(exc.returncode)

    def handle(self, *args, **options):
        try:
            config = load_config(
                options["config"],
                seed=options["seed"],
                workspace=options["workspace"],
                paper_scale=options["paper_scale"],
            )
            Pipeline(config, force=options["force"]).run(options["step"])
        except CdfError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        self.stdout.write(self.style.SUCCESS(f"{options['step']} done in {config.workspace}"))
