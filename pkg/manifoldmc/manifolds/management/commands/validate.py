"""
Run acceptance suites and write a pass/fail report.

Usage:
    python manage.py validate --override validate.suite=nu-minimizers
    python manage.py validate --override validate.suite=torus-marginals,cone-marginals
    python manage.py validate --override validate.suite=all --override validate.scale=0.1

Exits with code 4 when any check fails.
"""

from django.conf import settings

from manifolds.exceptions import ValidationFailure
from manifolds.management.base import RunCommand
from manifolds.utils.artifacts import write_json
from manifolds.utils.validation import resolve_suites, run_suites


class Command(RunCommand):
    help = 'Run validation suites (marginals, volumes, error bars, toy-model minimizers, frame properties)'
    mode = 'validate'

    def run(self, config, out_dir):
        names = resolve_suites(config['validate.suite'])
        scale = config['validate.scale']
        workers = settings.MANIFOLDS['WORKERS']

        self.stdout.write(self.style.WARNING(f'\nValidating {len(names)} suite(s) at scale {scale}'))
        reports = run_suites(names, config.seed, scale=scale, workers=workers)

        failed = []
        for report in reports:
            style = self.style.SUCCESS if report.passed else self.style.ERROR
            timing = f"{report.wall_time:.1f}s"
            if report.budget is not None:
                timing += f" of {report.budget:.1f}s budget"
            self.stdout.write(style(f"{report.name}: {'PASS' if report.passed else 'FAIL'} ({timing})"))
            if report.within_budget is False:
                self.stdout.write(self.style.WARNING("   over budget"))
            for check in report.checks:
                mark = 'ok ' if check.passed else 'BAD'
                self.stdout.write(
                    f'   [{mark}] {check.name}: {check.measured:.6g} '
                    f'(expected {check.expected:.6g}, tolerance {check.tolerance:.3g})'
                )
            if not report.passed:
                failed.append(report.name)

        write_json(out_dir / 'report.json', {
            'passed': not failed,
            'scale': scale,
            'suites': [report.to_dict() for report in reports],
        }, config)

        if failed:
            raise ValidationFailure(f"failed suites: {', '.join(failed)}")
        self.stdout.write(self.style.SUCCESS(f'All suites passed. Report in {out_dir}\n'))
