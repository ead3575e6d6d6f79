import math

import numpy as np
from django.test import SimpleTestCase

from manifolds.exceptions import DomainError
from manifolds.utils import analysis
from manifolds.utils.validation import DIFFUSIVE_MINIMIZERS


class ToyModelTests(SimpleTestCase):
    def test_g_const_values(self):
        self.assertAlmostEqual(analysis.g_const(math.e), math.e - 1, places=12)
        self.assertAlmostEqual(analysis.g_const(math.e ** 2), (math.e ** 2 - 1) / 4, places=12)

    def test_g_diffusive_closed_forms(self):
        nu = 3.0
        self.assertAlmostEqual(analysis.g_diffusive(nu, 2), nu / math.log(nu), places=12)
        self.assertAlmostEqual(analysis.g_diffusive(nu, 1), nu ** 2 / ((nu + 1) * math.log(nu)), places=12)

    def test_diffusive_tends_to_constant_tau_shape(self):
        # g_d / (d / 2) -> g for large d
        nu = 5.0
        self.assertAlmostEqual(analysis.g_diffusive(nu, 100_000) / 50_000, analysis.g_const(nu), places=3)

    def test_h_limits(self):
        for d in range(1, 6):
            for nu in (1 + 1e-6, 1e9):
                with self.subTest(d=d, nu=nu):
                    value = analysis.h_brownian(nu, d)
                    self.assertGreaterEqual(value, 0.0)
                    self.assertLess(value, 1e-4)

    def test_h_is_positive_inside_the_domain(self):
        for d in range(1, 8):
            for nu in np.geomspace(1.01, 1e4, 25):
                with self.subTest(d=d, nu=nu):
                    self.assertGreater(analysis.h_brownian(nu, d), 0.0)

    def test_l_is_g_times_h(self):
        for d in range(1, 6):
            for nu in np.geomspace(1.1, 100, 15):
                with self.subTest(d=d, nu=nu):
                    expected = analysis.g_diffusive(nu, d) * analysis.h_brownian(nu, d)
                    self.assertAlmostEqual(analysis.l_brownian(nu, d) / expected, 1.0, places=12)

    def test_domain(self):
        with self.assertRaises(DomainError):
            analysis.g_const(1.0)
        with self.assertRaises(DomainError):
            analysis.g_diffusive(2.0, 0)
        with self.assertRaises(DomainError):
            analysis.NuModel(analysis.NuModelKind.DIFFUSIVE, d=0)

    def test_model_dispatch(self):
        self.assertEqual(analysis.NuModel(analysis.NuModelKind.CONSTANT_TAU)(3.0), analysis.g_const(3.0))
        self.assertEqual(analysis.NuModel(analysis.NuModelKind.DIFFUSIVE, 4)(3.0), analysis.g_diffusive(3.0, 4))
        self.assertEqual(analysis.NuModel(analysis.NuModelKind.BROWNIAN_BALLS, 2)(3.0),
                         analysis.l_brownian(3.0, 2))


class MinimizerTests(SimpleTestCase):
    def test_constant_tau_minimizer(self):
        # stationary where log nu = 2 (1 - 1/nu)
        nu_star = analysis.g_const_minimizer()
        self.assertAlmostEqual(nu_star, 4.9, delta=0.05)
        self.assertAlmostEqual(math.log(nu_star), 2 * (1 - 1 / nu_star), places=5)

    def test_diffusive_minimizers(self):
        for d, expected in DIFFUSIVE_MINIMIZERS.items():
            with self.subTest(d=d):
                self.assertAlmostEqual(analysis.g_diffusive_minimizer(d), expected, delta=0.1)

    def test_two_dimensional_minimizer_is_e(self):
        self.assertAlmostEqual(analysis.g_diffusive_minimizer(2), math.e, places=4)

    def test_asymptote_is_approached(self):
        ratio_10 = analysis.g_diffusive(analysis.g_diffusive_minimizer(10), 10) / analysis.g_diffusive_asymptote(10)
        ratio_50 = analysis.g_diffusive(analysis.g_diffusive_minimizer(50), 50) / analysis.g_diffusive_asymptote(50)
        self.assertLess(abs(ratio_50 - 1), abs(ratio_10 - 1))
        self.assertLess(abs(ratio_50 - 1), 0.05)

    def test_minimize_scalar_on_a_parabola(self):
        self.assertAlmostEqual(analysis.minimize_scalar(lambda x: (x - 2.5) ** 2, 1.0, 4.0), 2.5, places=4)
        with self.assertRaises(DomainError):
            analysis.minimize_scalar(lambda x: x, 2.0, 1.0)


class GridTests(SimpleTestCase):
    def test_grid_is_geometric(self):
        nus = analysis.nu_grid(1.1, 100.0, 50)
        self.assertEqual(nus.shape, (50,))
        self.assertAlmostEqual(nus[0], 1.1)
        self.assertAlmostEqual(nus[-1], 100.0)
        ratios = nus[1:] / nus[:-1]
        self.assertLess(np.ptp(ratios), 1e-12)

    def test_table_rows(self):
        rows = analysis.nu_grid_table(3, [2.0, 5.0])
        self.assertEqual(len(rows), 2)
        self.assertEqual(set(rows[0]), {'nu', 'g_const', 'g_d', 'h_d', 'l_d'})
        self.assertEqual(rows[1]['g_d'], analysis.g_diffusive(5.0, 3))
