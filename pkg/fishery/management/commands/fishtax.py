from django.core.management.base import BaseCommand, CommandError
from django.utils import timezone
from django.conf import settings
from fishery.exceptions import ConfigValidationError, FisheryError
from fishery.models import ScenarioRun
from fishery.scenario_io import COMMANDS, config_to_dict, jsonable, parse_config, run_command, write_bundle
from pathlib import Path
import logging

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Solve, simulate and tax a fishery scenario described by a JSON config'

    def add_arguments(self, parser):
        parser.add_argument(
            '--config',
            required=True,
            help='Path to the scenario config (JSON)',
        )
        parser.add_argument(
            '--out',
            help='Output directory (defaults to FISHTAX_OUTPUT_DIR/<config name>)',
        )
        parser.add_argument(
            '--command',
            dest='pipeline',
            choices=COMMANDS,
            default='solve',
            help='Pipeline to run',
        )
        parser.add_argument(
            '--seed',
            type=int,
            default=None,
            help='Reserved; every pipeline is deterministic',
        )
        parser.add_argument(
            '--quiet',
            action='store_true',
            help='Only report errors',
        )
        parser.add_argument(
            '--no-record',
            action='store_true',
            help='Do not store the run in the database',
        )

    def handle(self, *args, **options):
        self.quiet = options['quiet']
        pipeline = options['pipeline']
        config_path = options['config']
        out_dir = options['out'] or str(
            Path(getattr(settings, 'FISHTAX_OUTPUT_DIR', 'results')) / Path(config_path).stem / pipeline
        )

        run = None
        if not options['no_record']:
            run = ScenarioRun.objects.create(command=pipeline, config_path=config_path, output_dir=out_dir)

        self.say(f'Running {pipeline} on {config_path}...')

        try:
            cfg = parse_config(config_path)
            if run:
                run.config_echo = config_to_dict(cfg)
                run.status = 'processing'
                run.save()

            bundle = run_command(pipeline, cfg)
            written = write_bundle(bundle, out_dir)

            if run:
                run.summary = jsonable(bundle.summary)
                run.status = 'completed'
                run.completed_date = timezone.now()
                run.save()

            self.report(pipeline, bundle.summary)
            self.say(f'✅ Wrote {len(written)} files to {out_dir}', self.style.SUCCESS)

        except FisheryError as e:
            logger.error('fishtax %s on %s failed: %s', pipeline, config_path, e)
            if run:
                run.status = 'failed'
                run.error_message = str(e)
                run.completed_date = timezone.now()
                run.save()
            if isinstance(e, ConfigValidationError):
                for line in e.diagnostics:
                    self.stderr.write(self.style.ERROR(f'  - {line}'))
            raise CommandError(f'❌ {pipeline} failed: {e}')

    def say(self, message, style=None):
        if not self.quiet:
            self.stdout.write(style(message) if style else message)

    def report(self, pipeline, summary):
        """Headline numbers of a finished run"""
        if 'x_hat' in summary:
            self.say(f'x_hat = {summary["x_hat"]:.12g}')
        if summary.get('v_hat') is not None:
            self.say(f'v(x_hat) = {summary["v_hat"]:.12g}')
        if summary.get('critical_tax') is not None:
            self.say(f'critical tax = {summary["critical_tax"]:.12g}')
        elif 'critical_tax_interval' in summary:
            lower, upper = summary['critical_tax_interval']
            self.say(f'critical tax interval = [{lower:.12g}, {upper:.12g}] (kink)', self.style.WARNING)
        audit = summary.get('audit')
        if audit and not (audit['increasing'] and audit['concave'] and audit['feedback_signs']):
            self.say('Value function failed its structural audit', self.style.WARNING)
        for entry in summary.get('runs', []):
            if entry.get('epsilon_optimal') is False:
                self.say(f'Taxation from x0 = {entry["x0"]} missed the epsilon target', self.style.WARNING)

