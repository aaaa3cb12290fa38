import unittest
import sys
import os
from unittest.mock import patch

# Ensure src is in path so we can import fairtransport
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../src')))

import fairtransport
from fairtransport import config
from fairtransport.pipeline import resolve_seed


class TestConfiguration(unittest.TestCase):
    def setUp(self):
        # Save original values
        self.orig = dict(
            method=config.DEFAULT_METHOD,
            permutations=config.DEFAULT_PERMUTATIONS,
            p_threshold=config.DEFAULT_P_THRESHOLD,
            sinkhorn_tol=config.SINKHORN_TOL,
            sinkhorn_max_iter=config.SINKHORN_MAX_ITER,
            epsilon_scale=config.EPSILON_SCALE,
            quantile_grid_cap=config.QUANTILE_GRID_CAP,
        )

    def tearDown(self):
        # Restore original values
        fairtransport.configure(**self.orig)

    def test_configure_updates_globals(self):
        fairtransport.configure(method="quantile1d", permutations=199, p_threshold=0.01, epsilon_scale=0.1)

        self.assertEqual(config.DEFAULT_METHOD, "quantile1d")
        self.assertEqual(config.DEFAULT_PERMUTATIONS, 199)
        self.assertEqual(config.DEFAULT_P_THRESHOLD, 0.01)
        self.assertEqual(config.EPSILON_SCALE, 0.1)

    def test_partial_update(self):
        fairtransport.configure(sinkhorn_max_iter=50)

        self.assertEqual(config.SINKHORN_MAX_ITER, 50)
        # Others should remain unchanged
        self.assertEqual(config.SINKHORN_TOL, self.orig["sinkhorn_tol"])
        self.assertEqual(config.DEFAULT_METHOD, self.orig["method"])

    def test_unknown_method_rejected(self):
        with self.assertRaises(ValueError):
            fairtransport.configure(method="gradient")

    def test_seed_from_env(self):
        with patch.dict(os.environ, {"FAIRTRANSPORT_SEED": "1234"}):
            self.assertEqual(config.seed_from_env(), 1234)
            self.assertEqual(resolve_seed(), 1234)
            # explicit seed wins over the environment
            self.assertEqual(resolve_seed(7), 7)

    def test_generated_seed_when_unset(self):
        with patch.dict(os.environ, {"FAIRTRANSPORT_SEED": ""}):
            self.assertIsNone(config.seed_from_env())
            seed = resolve_seed()
            self.assertTrue(0 <= seed < 2 ** 63)


if __name__ == '__main__':
    unittest.main()
