"""
Run the manifold sampler and write its output.

Usage:
    python manage.py sample --config configs/torus.cfg
    python manage.py sample --config configs/son11.cfg --seed 7 --out runs/son11
    python manage.py sample --config configs/cone.cfg --override sampler.n_steps=1e5

Writes samples.csv (step, x0..x{d_a-1}), summary.json (outcome rates and
tau-corrected observable means) and histogram.csv.
"""

import numpy as np

from manifolds.exceptions import ConfigError, DegenerateSeriesError, DomainError
from manifolds.management.base import RunCommand
from manifolds.utils.artifacts import write_histograms_csv, write_json, write_samples_csv
from manifolds.utils.sampler import ProposalParams, StepOutcome, run_chain
from manifolds.utils.stats import MIN_SERIES_LENGTH, mean_with_error


class Command(RunCommand):
    help = 'Sample a density on a constraint manifold with the tangent-step/projection MCMC'
    mode = 'sample'

    def run(self, config, out_dir):
        rng = self.rng(config)
        entry = self.build_manifold(config, rng)
        self.require_positive_dimension(entry)

        step_scale = config.get('sampler.s', entry.step_scale)
        try:
            params = ProposalParams(
                step_scale,
                entry.density,
                config.newton_params(),
                reverse_match_tol=config['sampler.reverse_match_tol'],
                reverse_check=config['sampler.reverse_check'],
            )
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc

        selected = config['sampler.observables'] or tuple(entry.observables)
        unknown = [name for name in selected if name not in entry.observables]
        if unknown:
            raise ConfigError(
                f"unknown observable {', '.join(unknown)} for {entry.manifold.name}; "
                f"available: {', '.join(entry.observables)}"
            )
        observables = {name: entry.observables[name] for name in selected}

        n_steps = config['sampler.n_steps']
        stride = config['sampler.stride']
        self.stdout.write(self.style.WARNING(f'\nSampling {n_steps:,} steps (s={step_scale}, stride={stride})'))

        result = run_chain(entry.manifold, params, entry.x_start, n_steps, stride, rng, observables=observables)

        write_samples_csv(out_dir / 'samples.csv', result.sample_steps, result.samples, config)

        summary = {
            'manifold': entry.manifold.name,
            'n_steps': result.n_steps,
            'stored_samples': int(result.samples.shape[0]),
            'step_scale': step_scale,
            'acceptance': result.acceptance if n_steps else None,
            'outcome_counts': {outcome.value: count for outcome, count in result.counts.items()},
            'outcome_rates': result.rates() if n_steps else None,
            'observables': {name: self._summarize(result.series[name]) for name in observables},
        }
        write_json(out_dir / 'summary.json', summary, config)

        bins = config['sampler.bins']
        histograms = {}
        for name in observables:
            if name in entry.histograms:
                counts, edges = np.histogram(result.series[name], bins=bins, range=entry.histograms[name])
                histograms[name] = (edges, counts)
        write_histograms_csv(out_dir / 'histogram.csv', histograms, config)

        self.stdout.write(f'   Stored samples: {result.samples.shape[0]:,}')
        if n_steps:
            rates = result.rates()
            self.stdout.write(f'   Acceptance: {result.acceptance:.3f}')
            for outcome in StepOutcome:
                if outcome is not StepOutcome.ACCEPTED:
                    self.stdout.write(f'   {outcome.value}: {rates[outcome.value]:.4f}')
        for name, stats in summary['observables'].items():
            if stats['mean'] is not None:
                self.stdout.write(f"   <{name}> = {stats['mean']:.6g} +/- {stats['stderr']:.2g} (tau={stats['tau']:.3g})")
        self.stdout.write(self.style.SUCCESS(f'Sampling complete. Output in {out_dir}\n'))

    def _summarize(self, series):
        if series.shape[0] < MIN_SERIES_LENGTH:
            return {'mean': None, 'stderr': None, 'tau': None, 'n': int(series.shape[0])}
        try:
            estimate = mean_with_error(series)
        except (DegenerateSeriesError, DomainError):
            return {'mean': float(series.mean()), 'stderr': None, 'tau': None, 'n': int(series.shape[0])}
        return {'mean': estimate.mean, 'stderr': estimate.stderr, 'tau': estimate.tau, 'n': estimate.n}
