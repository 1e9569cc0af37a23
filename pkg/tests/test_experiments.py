import math
import os
import tempfile
import unittest

import numpy as np
import pandas as pd
import pytest

from core.errors import ConfigError, InputError
from core.estimators import FilterSpec
from core.experiments import (
    PATH_COLUMNS,
    PLOT_COLUMNS,
    SimConfig,
    SpectrumGen,
    design_with_spectrum,
    export,
    export_table,
    generate,
    import_records,
    path_minimum,
    read_metadata,
    run_comparison,
    run_oracle,
    run_paths,
    simulate_replicates,
)
from core.risk import TargetSpec, decompose_linear
from core.utils import mean_and_se


def small_config(**changes):
    base = SimConfig(
        n=30,
        p=40,
        spectrum=SpectrumGen("spiked", spike_count=3, spike_high=20.0),
        replicates=5,
        seed=5,
        gd_max_iter=300,
        gd_stride=10,
        cg_subdivisions=4,
        oracle_points=32,
    )
    return base.with_overrides(**changes)


def same_value(a, b):
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    return a == b


class TestSpectrumGen(unittest.TestCase):
    def test_full_scale_spectrum(self):
        values = SpectrumGen("spiked", spike_count=20, spike_high=100.0, spike_low=1.0).eigenvalues(500)
        self.assertEqual(int(np.sum(values == 100.0)), 20)
        self.assertEqual(int(np.sum(values == 1.0)), 480)

    def test_families(self):
        poly = SpectrumGen("poly_decay", alpha=2.0).eigenvalues(4)
        np.testing.assert_allclose(poly, [1.0, 0.25, 1.0 / 9.0, 1.0 / 16.0])
        profile = SpectrumGen("beta_profile", beta=1.0).eigenvalues(4)
        np.testing.assert_allclose(profile, [0.8, 0.6, 0.4, 0.2])
        explicit = SpectrumGen("explicit", values=(1.0, 3.0, 2.0)).eigenvalues(3)
        np.testing.assert_array_equal(explicit, [3.0, 2.0, 1.0])

    def test_validation(self):
        with self.assertRaises(ConfigError):
            SpectrumGen("flat")
        with self.assertRaises(ConfigError):
            SpectrumGen("explicit", values=(1.0, -1.0))


class TestSimConfig(unittest.TestCase):
    def test_defaults_are_desk_scale(self):
        config = SimConfig()
        self.assertEqual((config.n, config.p, config.sigma2, config.lam), (100, 125, 6.0, 3.0))
        self.assertEqual(config.replicates, 100)
        self.assertEqual(config.seed, 2024)

    def test_invalid_values(self):
        for changes in ({"n": 0}, {"replicates": 0}, {"sigma2": -1.0}, {"lam": math.inf}, {"beta0_law": "cauchy"}, {"eta": 0.0}):
            with self.assertRaises(ConfigError):
                SimConfig().with_overrides(**changes)
        with self.assertRaises(ConfigError):
            SimConfig(p=3, beta0_law="fixed", beta0=(1.0, 2.0))

    def test_metadata(self):
        meta = small_config().metadata()
        self.assertEqual(meta["seed"], 5)
        self.assertEqual(meta["rng"], "numpy.Philox+SeedSequence")


class TestGeneration(unittest.TestCase):
    def test_design_with_exact_spectrum(self):
        s = np.array([5.0, 3.0, 1.0, 0.0, 0.0])
        X = design_with_spectrum(4, 5, s, np.random.default_rng(0))
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(X.T @ X / 4))[::-1], s, atol=1e-10)
        with self.assertRaises(InputError):
            design_with_spectrum(2, 5, s, np.random.default_rng(0))

    def test_noiseless_response(self):
        data, truth = generate(small_config(sigma2=0.0), 0)
        np.testing.assert_array_equal(data.y, data.X @ truth.beta0)

    def test_determinism_and_streams(self):
        config = small_config()
        a, _ = generate(config, 1)
        b, _ = generate(config, 1)
        c, _ = generate(config, 2)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.X, c.X)
        self.assertFalse(np.array_equal(a.y, c.y))
        d, _ = generate(config.with_overrides(fixed_design=False), 2)
        self.assertFalse(np.array_equal(a.X, d.X))

    def test_rotation_keeps_spectrum(self):
        _, truth = generate(small_config(rotate=True), 0)
        values = np.sort(np.linalg.eigvalsh(truth.Sigma))[::-1]
        np.testing.assert_allclose(values, small_config().spectrum.eigenvalues(40), atol=1e-10)

    def test_worker_count_does_not_change_results(self):
        config = small_config(replicates=4)
        serial = simulate_replicates(config, workers=1)
        parallel = simulate_replicates(config, workers=3)
        for a, b in zip(serial, parallel):
            self.assertEqual(a.index, b.index)
            np.testing.assert_array_equal(a.trace.iterates, b.trace.iterates)


class TestPaths(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.config = small_config(sigma2=1.0)
        cls.reps = simulate_replicates(cls.config, workers=1)
        cls.records = run_paths(cls.config, cls.reps)

    def test_row_counts(self):
        stop = max(rep.trace.stop_index for rep in self.reps)
        ks = self.config.gd_max_iter // self.config.gd_stride + 1
        for gamma in ("beta0", "beta_lambda"):
            rows = [r for r in self.records if r.gamma == gamma]
            self.assertEqual(sum(r.method == "CG" for r in rows), stop * self.config.cg_subdivisions + 1)
            for method in ("GD", "GF", "RR"):
                self.assertEqual(sum(r.method == method for r in rows), ks)

    def test_cg_terminal_equals_ridge(self):
        terminal = [r for r in self.records if r.method == "CG" and r.gamma == "beta_lambda"][-1]
        ridge_totals = [decompose_linear(rep.spec, FilterSpec.rr(rep.spec.lam), TargetSpec.beta_lambda()).total for rep in self.reps]
        np.testing.assert_allclose(terminal.totals, ridge_totals, rtol=1e-8)

    def test_bounds_hold(self):
        for record in self.records:
            if record.satisfied is not None:
                self.assertTrue(record.satisfied, msg=f"{record.method} {record.gamma} {record.param}")

    def test_cg_beta0_rows_have_no_decomposition(self):
        row = next(r for r in self.records if r.method == "CG" and r.gamma == "beta0")
        self.assertTrue(math.isnan(row.A))
        self.assertFalse(math.isnan(row.total_mean))

    def test_cg_minimum_before_gd(self):
        cg_iteration, _ = path_minimum(self.records, "CG", "beta0")
        gd_iteration, _ = path_minimum(self.records, "GD", "beta0")
        self.assertLess(cg_iteration, gd_iteration)
        with self.assertRaises(InputError):
            path_minimum(self.records, "PLS", "beta0")

    def test_csv_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "paths.csv")
            export(self.records, path, metadata=self.config.metadata())
            meta = read_metadata(path)
            loaded = import_records(path)
        self.assertEqual(meta["seed"], "5")
        self.assertEqual(len(loaded), len(self.records))
        for original, restored in zip(self.records, loaded):
            for a, b in zip(original.row(), restored.row()):
                self.assertTrue(same_value(a, b), msg=f"{a!r} != {b!r}")

    def test_plot_format(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "plot.csv")
            export(self.records, path, fmt="plot")
            frame = pd.read_csv(path, comment="#")
        self.assertEqual(tuple(frame.columns), PLOT_COLUMNS)
        np.testing.assert_allclose(frame["x_position"], np.sqrt(frame["iteration"]))

    def test_same_seed_gives_identical_bytes(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = [os.path.join(tmp, f"run{i}.csv") for i in range(2)]
            for path in paths:
                export(run_paths(self.config), path, metadata=self.config.metadata())
            with open(paths[0], "rb") as first, open(paths[1], "rb") as second:
                self.assertEqual(first.read(), second.read())

    def test_empty_export_is_header_only(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "empty.csv")
            export([], path)
            with open(path, encoding="utf-8") as handle:
                self.assertEqual(handle.read(), ",".join(PATH_COLUMNS) + "\n")

    def test_unknown_format(self):
        with self.assertRaises(InputError):
            export(self.records, "unused.csv", fmt="xlsx")


class TestTables(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.config = small_config(replicates=3)
        cls.reps = simulate_replicates(cls.config, workers=1)

    def test_comparison_records(self):
        records = run_comparison(self.config, self.reps)
        self.assertEqual(len(records), 2 * 2 * self.config.oracle_points)
        self.assertEqual({r.gamma for r in records}, {"beta0", "beta_lambda"})
        self.assertTrue(all(r.satisfied for r in records))

    def test_oracle_records_export(self):
        records = run_oracle(self.config, self.reps)
        self.assertEqual([r.gamma for r in records], ["beta0", "beta_lambda"])
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "oracle.csv")
            export_table(records, path, metadata={"seed": 5})
            frame = pd.read_csv(path, comment="#")
        self.assertEqual(len(frame), 2)
        self.assertIn("cg_oracle", frame.columns)

    def test_empty_table(self):
        with self.assertRaises(InputError):
            export_table([], "unused.csv")


def test_gd_and_gf_records_agree_on_fine_grid():
    config = small_config(sigma2=1.0, replicates=2, gd_max_iter=1000, gd_stride=1000)
    records = run_paths(config)
    for gamma in ("beta0", "beta_lambda"):
        rows = [r for r in records if r.gamma == gamma and r.method in ("GD", "GF", "RR")]
        scale = max(r.risk for r in rows)
        gd = next(r for r in rows if r.method == "GD" and r.iteration == 1000)
        gf = next(r for r in rows if r.method == "GF" and r.iteration == 1000)
        assert abs(gd.risk - gf.risk) <= 1e-3 * scale


def test_cross_term_has_zero_monte_carlo_mean():
    config = SimConfig(replicates=200, seed=31)
    reps = simulate_replicates(config)
    for filt in (FilterSpec.gf(1.0), FilterSpec.rr(config.lam + 1.0)):
        cross = [decompose_linear(rep.spec, filt, TargetSpec.beta0()).C for rep in reps]
        mean, se = mean_and_se(cross)
        assert abs(mean) <= 3.0 * se


@pytest.mark.parametrize("column", PATH_COLUMNS)
def test_path_columns_are_record_fields(column):
    from core.experiments import PathRecord

    assert column in PathRecord.__dataclass_fields__


if __name__ == "__main__":
    unittest.main()
