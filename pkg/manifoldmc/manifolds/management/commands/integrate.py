"""
Integrate a density over a constraint manifold with nested balls.

Usage:
    python manage.py integrate --config configs/torus_area.cfg
    python manage.py integrate --config configs/son3_volume.cfg --seed 3
    python manage.py integrate --config configs/chain4.cfg --override manifold.density=rigidity

Writes result.json with Z_hat, sigma_r, the schedule and every stage's
diagnostics. A failed stage writes failure.json and exits with code 3.
"""

from manifolds.exceptions import ConfigError, DomainError, StageFailureError
from manifolds.management.base import RunCommand
from manifolds.utils.artifacts import write_json
from manifolds.utils.integrator import IntegrationConfig, integrate


class Command(RunCommand):
    help = 'Estimate the integral of a density over a constraint manifold with single-run error bars'
    mode = 'integrate'

    def integration_config(self, config, step_scale) -> IntegrationConfig:
        x0 = config['integrate.x0']
        try:
            return IntegrationConfig(
                n_total=config['integrate.n_t'],
                k=config['integrate.k'],
                step_scale=step_scale,
                newton=config.newton_params(),
                burn_in_fraction=config['integrate.burn_in'],
                n_initial=config['integrate.n_initial'],
                initial_stride=config['integrate.initial_stride'],
                n_probe=config['integrate.n_probe'],
                pair_steps=config['integrate.pair_steps'],
                angle_tol_factor=config['integrate.angle_tol_factor'],
                probe_start_fraction=config['integrate.probe_start'],
                stage_step_fraction=config['integrate.stage_step_fraction'],
                n_innermost=config['integrate.n_k'],
                center=tuple(x0) if x0 is not None else None,
                r_outer=config['integrate.r0'],
                r_inner=config['integrate.rk'],
                parallel=config['integrate.parallel'],
                workers=config['integrate.workers'],
            )
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc

    def run(self, config, out_dir):
        rng = self.rng(config)
        entry = self.build_manifold(config, rng)
        self.require_positive_dimension(entry)
        step_scale = config.get('sampler.s', entry.step_scale)
        settings = self.integration_config(config, step_scale)
        if settings.center is not None and len(settings.center) != entry.manifold.ambient_dim:
            raise ConfigError(
                f"integrate.x0 has {len(settings.center)} coordinates, "
                f"{entry.manifold.name} lives in R^{entry.manifold.ambient_dim}"
            )

        self.stdout.write(self.style.WARNING(
            f'\nIntegrating over {entry.manifold.name} (n_t={settings.n_total:,}, k={settings.k}, s={step_scale})'
        ))
        try:
            estimate = integrate(entry.manifold, entry.density, settings, rng, entry.x_start)
        except StageFailureError as exc:
            write_json(out_dir / 'failure.json', {'error': str(exc), 'stage': exc.stage,
                                                  'diagnostics': exc.diagnostics}, config)
            self.stdout.write(self.style.ERROR(f'Stage {exc.stage} failed: {exc}'))
            raise

        payload = {'manifold': entry.manifold.name}
        payload.update(estimate.to_dict())
        if entry.reference is not None:
            payload['reference'] = entry.reference
            payload['relative_error'] = estimate.Z_hat / entry.reference - 1
        write_json(out_dir / 'result.json', payload, config)

        schedule = estimate.schedule
        self.stdout.write(f'   Schedule: x0={[round(v, 6) for v in schedule.center]}, nu={schedule.nu:.4g}')
        self.stdout.write(f'   Radii: {", ".join(f"{r:.4g}" for r in schedule.radii)}')
        for stage in estimate.stages:
            self.stdout.write(
                f'   Stage {stage.stage}: R_hat={stage.R_hat:.5g} (p={stage.p_hat:.3f}, tau={stage.tau_hat:.3g}, '
                f'acceptance={stage.acceptance:.3f})'
            )
        self.stdout.write(f'   Innermost: Z_k_hat={estimate.Z_k_hat:.6g} (rho_k={estimate.rho_k:.3g})')
        self.stdout.write(self.style.SUCCESS(
            f'Z_hat = {estimate.Z_hat:.6g} +/- {estimate.sigma_r * estimate.Z_hat:.3g} '
            f'(sigma_r={estimate.sigma_r:.3g}) in {estimate.wall_time:.1f}s'
        ))
        if entry.reference is not None:
            self.stdout.write(f"   Reference: {entry.reference:.6g} (relative error {payload['relative_error']:+.3%})")
        self.stdout.write(f'   Output in {out_dir}\n')
