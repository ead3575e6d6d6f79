"""
Tabulate the nu toy models and their minimizers.

Usage:
    python manage.py analyze_nu
    python manage.py analyze_nu --override analyze.d=1,2,3,10 --override analyze.points=400

Writes nu_grid_d{d}.csv (nu, g_const, g_d, h_d, l_d) per dimension and
minimizers.json.
"""

from manifolds.exceptions import ConfigError
from manifolds.management.base import RunCommand
from manifolds.utils import analysis
from manifolds.utils.artifacts import write_json, write_table_csv

COLUMNS = ('nu', 'g_const', 'g_d', 'h_d', 'l_d')


class Command(RunCommand):
    help = 'Tabulate g(nu), g_d(nu), h_d(nu), l_d(nu) and report their minimizers'
    mode = 'analyze-nu'

    def run(self, config, out_dir):
        nu_min, nu_max = config['analyze.nu_min'], config['analyze.nu_max']
        if not 1 < nu_min < nu_max:
            raise ConfigError(f"need 1 < analyze.nu_min < analyze.nu_max, got {nu_min}, {nu_max}")
        dims = config['analyze.d']
        nus = analysis.nu_grid(nu_min, nu_max, config['analyze.points'])

        self.stdout.write(self.style.WARNING(f'\nToy models on {len(nus)} points in [{nu_min}, {nu_max}]'))
        g_const_star = analysis.g_const_minimizer()
        self.stdout.write(f'   argmin g(nu) = {g_const_star:.4f}')

        per_dimension = {}
        for d in dims:
            write_table_csv(out_dir / f'nu_grid_d{d}.csv', analysis.nu_grid_table(d, nus), config, COLUMNS)
            g_star = analysis.g_diffusive_minimizer(d)
            l_star = analysis.minimize_scalar(lambda nu: analysis.l_brownian(nu, d), 1.01, 50.0)
            per_dimension[str(d)] = {
                'g_d_argmin': g_star,
                'g_d_min': analysis.g_diffusive(g_star, d),
                'g_d_asymptote': analysis.g_diffusive_asymptote(d),
                'l_d_argmin': l_star,
            }
            self.stdout.write(f'   d={d}: argmin g_d = {g_star:.4f}, argmin l_d = {l_star:.4f}')

        write_json(out_dir / 'minimizers.json', {
            'g_const_argmin': g_const_star,
            'dimensions': per_dimension,
        }, config)
        self.stdout.write(self.style.SUCCESS(f'Analysis complete. Output in {out_dir}\n'))
