"""
Shared plumbing for the run commands: the --config/--seed/--out/--override
flags, output directory resolution and the mapping from ManifoldError to
the command's exit code.
"""

import logging
from pathlib import Path

import numpy as np
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from manifolds.config import RunConfig
from manifolds.exceptions import EXIT_CONFIG, ConfigError, ManifoldError
from manifolds.utils import zoo
from manifolds.utils.artifacts import ensure_output_dir

logger = logging.getLogger(__name__)


class RunCommand(BaseCommand):
    mode = None

    def add_arguments(self, parser):
        parser.add_argument(
            '--config',
            type=str,
            default=None,
            help='Run configuration file (key = value lines with dotted section names)'
        )
        parser.add_argument(
            '--seed',
            type=int,
            default=None,
            help='Random seed; overrides run.seed'
        )
        parser.add_argument(
            '--out',
            type=str,
            default=None,
            help='Output directory; overrides run.out'
        )
        parser.add_argument(
            '--override',
            action='append',
            default=[],
            metavar='KEY=VALUE',
            help='Override one config key (repeatable)'
        )

    def handle(self, *args, **options):
        try:
            config = RunConfig.load(
                options['config'],
                overrides=options['override'],
                seed=options['seed'],
                out=options['out'],
                mode=self.mode,
            )
            fallback = Path(settings.MANIFOLDS['OUTPUT_DIR']) / f"{self.mode}-{config.config_hash[:8]}-{config.seed}"
            out_dir = ensure_output_dir(config.output_dir(fallback))
            logger.info(f"{self.mode}: config hash {config.config_hash}, seed {config.seed}, output {out_dir}")
            self.run(config, out_dir)
        except ManifoldError as exc:
            logger.error(f"{self.mode} failed: {exc}")
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
        except OSError as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc

    def run(self, config: RunConfig, out_dir: Path):
        raise NotImplementedError

    def rng(self, config: RunConfig) -> np.random.Generator:
        return np.random.default_rng(config.seed)

    def build_manifold(self, config: RunConfig, rng: np.random.Generator) -> zoo.ZooEntry:
        entry = zoo.build(config.manifold_name(), config.manifold_params(), rng=rng)
        self.stdout.write(
            f'   Manifold: {entry.manifold.name} (d_a={entry.manifold.ambient_dim}, '
            f'm={entry.manifold.equality_count}, l={entry.manifold.inequality_count}, '
            f'd={entry.manifold.intrinsic_dim})'
        )
        return entry

    def require_positive_dimension(self, entry: zoo.ZooEntry):
        if entry.manifold.intrinsic_dim < 1:
            raise ConfigError(f"{entry.manifold.name} has intrinsic dimension {entry.manifold.intrinsic_dim} < 1")
