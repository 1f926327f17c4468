"""Observer pipeline tests: training sets, regressors, explicit tables,
two-stage filtering and the degree-7 polynomial reduction."""
from dataclasses import dataclass

import numpy as np
import pytest

from fcev_ems import observer as obs
from fcev_ems import powertrain as pt


@dataclass
class FakeStep:
    p_batt: float
    p_load: float
    u_batt: float
    r_batt: float
    p_fc: float
    soc: float


def make_log(soc_values, p_batt=1000.0):
    return [FakeStep(p_batt=p_batt, p_load=p_batt + 500.0, u_batt=370.0,
                     r_batt=0.5, p_fc=500.0, soc=s) for s in soc_values]


class TestGenerateTrainingSet:
    def test_constant_soc_gives_zero_deltas(self):
        samples = obs.generate_training_set(make_log([0.6] * 5), dt=0.05)
        assert all(s.delta_soc == 0.0 for s in samples)

    def test_two_step_log_one_sample(self):
        samples = obs.generate_training_set(make_log([0.6, 0.59]), dt=0.05)
        assert len(samples) == 1
        assert samples[0].delta_soc == pytest.approx(-0.01)

    def test_coulomb_counting_oracle(self):
        # I = 40 A over dt = 0.05 s on 40 Ah: delta = -40*0.05/(3600*40)
        delta = -40.0 * 0.05 / (3600.0 * 40.0)
        samples = obs.generate_training_set(make_log([0.6, 0.6 + delta]), dt=0.05)
        assert samples[0].delta_soc == pytest.approx(delta, rel=1e-9)
        assert samples[0].delta_soc == pytest.approx(-1.3889e-5, rel=1e-4)

    def test_short_log_raises(self):
        with pytest.raises(obs.EmptyLogError):
            obs.generate_training_set(make_log([0.6]), dt=0.05)

    def test_csv_round_trip(self, tmp_path):
        samples = obs.generate_training_set(make_log(np.linspace(0.6, 0.58, 7)), dt=0.05)
        path = tmp_path / "train.csv"
        obs.write_training_csv(samples, path)
        loaded = obs.read_training_csv(path)
        assert loaded == samples


def _linear_samples(n=400, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, 5))
    y = 3.0 * x[:, 0] + 0.05 * rng.normal(size=n)
    return [obs.ObserverSample(*row, delta_soc=t) for row, t in zip(x, y)]


class TestRegressors:
    def test_constant_target_predicts_constant(self):
        samples = [obs.ObserverSample(float(i), 1.0, 2.0, 3.0, 4.0, delta_soc=0.7)
                   for i in range(20)]
        trained = obs.train_regressor(
            obs.RegressorSpec("random_forest", {"n_trees": 5, "max_depth": 1}), samples)
        preds = trained.predict(np.random.default_rng(1).uniform(0, 20, (10, 5)))
        np.testing.assert_allclose(preds, 0.7)

    def test_boosting_fits_linear_target(self):
        samples = _linear_samples()
        trained = obs.train_regressor(
            obs.RegressorSpec("gradient_boosted_trees",
                              {"n_rounds": 200, "learning_rate": 0.1, "max_depth": 3}),
            samples)
        _, y = obs.samples_to_arrays(samples)
        assert trained.training_rmse < 0.05 * np.std(y)

    @pytest.mark.parametrize("kind", ["random_forest", "gradient_boosted_trees"])
    def test_determinism(self, kind):
        samples = _linear_samples(n=200)
        spec = obs.RegressorSpec(kind, {}, seed=42)
        a = obs.train_regressor(spec, samples)
        b = obs.train_regressor(spec, samples)
        x = np.random.default_rng(3).uniform(-1, 1, (50, 5))
        np.testing.assert_array_equal(a.predict(x), b.predict(x))

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            obs.train_regressor(obs.RegressorSpec("random_forest"), [])

    def test_non_finite_rejected(self):
        bad = [obs.ObserverSample(np.nan, 1, 2, 3, 4, delta_soc=0.0)] * 10
        with pytest.raises(ValueError, match="finite"):
            obs.train_regressor(obs.RegressorSpec("random_forest"), bad)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown regressor"):
            obs.train_regressor(obs.RegressorSpec("mystery"), _linear_samples(50))

    def test_plugin_registration(self):
        class Flat:
            def fit(self, x, y):
                self.mean = float(np.mean(y))
                return self

            def predict(self, x):
                return np.full(np.atleast_2d(x).shape[0], self.mean)

        obs.register_regressor("flat_test", lambda spec: Flat())
        try:
            trained = obs.train_regressor(obs.RegressorSpec("flat_test"), _linear_samples(50))
            assert trained.predict(np.zeros((1, 5))).shape == (1,)
        finally:
            del obs.REGRESSOR_KINDS["flat_test"]

    def test_container_round_trip(self, tmp_path):
        samples = _linear_samples(150)
        trained = obs.train_regressor(
            obs.RegressorSpec("random_forest", {"n_trees": 10}, seed=7), samples)
        path = tmp_path / "reg.bin"
        obs.write_regressor(trained, path, holdout_rmse=0.123)
        loaded = obs.read_regressor(path)
        x = np.random.default_rng(5).uniform(-1, 1, (20, 5))
        np.testing.assert_array_equal(loaded.predict(x), trained.predict(x))
        assert loaded.spec == trained.spec
        assert loaded.training_digest == trained.training_digest


class VectorizedStub:
    """Deterministic closed-form 'regressor' for table tests."""

    def __init__(self, fn=None):
        self.fn = fn or (lambda x: x[:, 0] * 1e-9 + x[:, 1] * 1e-10)

    def predict(self, x):
        return self.fn(np.atleast_2d(np.asarray(x, dtype=float)))


def small_axes(counts=(3, 4, 3, 3, 3)):
    names = obs.FEATURE_ORDER
    ranges = [(-30000.0, 40000.0), (-40000.0, 70000.0), (300.0, 420.0),
              (0.43, 0.55), (0.0, 61560.0)]
    return tuple(obs.AxisDef(n, lo, hi, c) for n, (lo, hi), c in zip(names, ranges, counts))


class TestExplicitTable:
    def test_grid_size_count(self):
        table = obs.build_explicit_table(VectorizedStub(), small_axes((2, 2, 2, 2, 2)))
        assert table.values.size == 32

    def test_node_lookup_equals_prediction_bit_exact(self):
        stub = VectorizedStub()
        axes = small_axes()
        table = obs.build_explicit_table(stub, axes)
        rng = np.random.default_rng(0)
        for _ in range(50):
            idx = tuple(rng.integers(0, a.count) for a in axes)
            point = table.grid_point(idx)
            assert table.value_at(idx) == stub.predict(point[None, :])[0]

    def test_budget_error_names_product(self):
        with pytest.raises(obs.GridBudgetError, match="59535"):
            obs.build_explicit_table(VectorizedStub(), obs.default_axes(), max_points=1000)

    def test_production_scale_grid_accepted(self):
        # 35 * 27 * 15 * 7 * 11 = 3,888,885 points
        axes = small_axes((35, 27, 15, 7, 11))
        total = np.prod([a.count for a in axes])
        assert total == 3888885
        table = obs.build_explicit_table(VectorizedStub(), axes, max_points=4_000_000)
        assert table.values.size == 3888885

    def test_chunk_boundaries_do_not_matter(self):
        stub = VectorizedStub()
        axes = small_axes()
        a = obs.build_explicit_table(stub, axes, chunk=7)
        b = obs.build_explicit_table(stub, axes, chunk=100000)
        np.testing.assert_array_equal(a.values, b.values)

    def test_axes_order_enforced(self):
        axes = list(small_axes())
        axes[0], axes[1] = axes[1], axes[0]
        with pytest.raises(ValueError, match="ordered"):
            obs.build_explicit_table(VectorizedStub(), tuple(axes))


class TestFiltering:
    @pytest.fixture(scope="class")
    def table(self):
        return obs.build_explicit_table(
            VectorizedStub(lambda x: x[:, 0] * 1e-9 + x[:, 2] * 1e-7 + x[:, 4] * 1e-8),
            small_axes((5, 6, 4, 3, 4)))

    def test_stage1_node_slice_equals_direct_indexing(self, table):
        iu, ir, ip = 2, 1, 3
        s = obs.filter_stage1(table,
                              float(table.axes[2].values[iu]),
                              float(table.axes[3].values[ir]),
                              float(table.axes[4].values[ip]))
        np.testing.assert_array_equal(s.values, table.values[:, :, iu, ir, ip].T)

    def test_stage1_slice_shape(self, table):
        s = obs.filter_stage1(table, 360.0, 0.5, 30000.0)
        assert s.values.shape == (table.axes[1].count, table.axes[0].count)

    def test_stage1_snap_is_nearest(self, table):
        axis = table.axes[2]
        below = axis.values[1] + 0.49 * axis.spacing
        above = axis.values[1] + 0.51 * axis.spacing
        s1 = obs.filter_stage1(table, float(below), 0.5, 30000.0)
        s2 = obs.filter_stage1(table, float(above), 0.5, 30000.0)
        assert s1.snapped["u_batt"] == axis.values[1]
        assert s2.snapped["u_batt"] == axis.values[2]
        assert not np.array_equal(s1.values, s2.values)

    def test_stage1_out_of_range(self, table):
        with pytest.raises(ValueError, match="u_batt"):
            obs.filter_stage1(table, 1000.0, 0.5, 30000.0)

    def test_stage2_row_matches_brute_scan(self, table):
        s = obs.filter_stage1(table, 360.0, 0.5, 30000.0)
        query = 12345.0
        curve = obs.filter_stage2(s, query)
        distances = np.abs(s.p_load_axis.values - query)
        nearest = int(np.argmin(distances))
        np.testing.assert_array_equal(curve.delta_soc, s.values[nearest])
        assert curve.snapped_p_load == s.p_load_axis.values[nearest]

    def test_stage2_row_length(self, table):
        s = obs.filter_stage1(table, 360.0, 0.5, 30000.0)
        curve = obs.filter_stage2(s, 0.0)
        assert curve.delta_soc.shape == (table.axes[0].count,)


class TestSocPolynomial:
    def test_exact_degree7_recovery(self):
        rng = np.random.default_rng(2)
        coeffs = rng.normal(size=8) * np.array(
            [1e-5, 1e-9, 1e-13, 1e-17, 1e-21, 1e-25, 1e-29, 1e-33])
        x = np.linspace(-30000.0, 40000.0, 25)
        y = sum(c * x**j for j, c in enumerate(coeffs))
        poly = obs.fit_soc_polynomial(x, y)
        assert poly.fit_rmse < 1e-12 * (np.max(np.abs(y)) + 1e-30)
        # evaluation recovers values to 1e-12 relative
        probe = np.linspace(-30000.0, 40000.0, 101)
        expected = sum(c * probe**j for j, c in enumerate(coeffs))
        np.testing.assert_allclose(poly(probe), expected, rtol=1e-12, atol=1e-18)

    def test_constant_curve(self):
        x = np.linspace(-1000.0, 1000.0, 12)
        poly = obs.fit_soc_polynomial(x, np.full(12, 4.2e-6))
        assert poly.coefficients[0] == pytest.approx(4.2e-6, rel=1e-9)
        assert np.max(np.abs(poly.coefficients[1:]) * 1000.0 ** np.arange(1, 8)) < 1e-15

    def test_circuit_rate_curve_fit_quality(self):
        # Degree-7 fit of the closed-form SOC-rate expression stays below 1%
        # of the curve range.
        batt = pt.default_battery()
        x = np.linspace(batt.p_charge_min, batt.p_discharge_max, 40)
        rates = np.array([pt.soc_rate(batt, 0.55, float(p)) for p in x])
        poly = obs.fit_soc_polynomial(x, rates)
        assert poly.fit_rmse < 0.01 * (rates.max() - rates.min())

    def test_degree7_never_worse_than_linear(self):
        batt = pt.default_battery()
        x = np.linspace(batt.p_charge_min, batt.p_discharge_max, 40)
        for soc in (0.2, 0.5, 0.8):
            rates = np.array([pt.soc_rate(batt, soc, float(p)) for p in x])
            poly = obs.fit_soc_polynomial(x, rates)
            lin = np.polyfit(x, rates, 1)
            lin_rmse = np.sqrt(np.mean((np.polyval(lin, x) - rates) ** 2))
            assert poly.fit_rmse <= lin_rmse + 1e-18

    def test_too_few_points(self):
        with pytest.raises(obs.FitError):
            obs.fit_soc_polynomial(np.arange(5.0), np.arange(5.0))

    def test_duplicate_abscissae(self):
        x = np.array([0.0, 1, 2, 3, 4, 5, 6, 6.0, 6.0])
        with pytest.raises(obs.FitError, match="rank"):
            obs.fit_soc_polynomial(x, np.sin(x))

    def test_domain_error(self):
        x = np.linspace(0.0, 100.0, 10)
        poly = obs.fit_soc_polynomial(x, np.ones(10))
        with pytest.raises(obs.PolynomialDomainError):
            poly(150.0)

    def test_coefficients_reported_in_original_units(self):
        # y = a0 + a1*x exactly; higher coefficients collapse
        x = np.linspace(-2000.0, 2000.0, 15)
        y = 3e-6 + 2e-9 * x
        poly = obs.fit_soc_polynomial(x, y)
        assert poly.coefficients[0] == pytest.approx(3e-6, rel=1e-8)
        assert poly.coefficients[1] == pytest.approx(2e-9, rel=1e-8)


class TestTableIO:
    def test_binary_round_trip(self, tmp_path):
        table = obs.build_explicit_table(VectorizedStub(), small_axes(),
                                         provenance={"dt": 0.05, "note": "t"})
        path = tmp_path / "table.bin"
        obs.write_table(table, path)
        loaded = obs.read_table(path)
        np.testing.assert_array_equal(loaded.values, table.values)
        assert loaded.axes == table.axes
        assert loaded.provenance["note"] == "t"

    def test_csv_export_lossless(self, tmp_path):
        table = obs.build_explicit_table(
            VectorizedStub(lambda x: np.sin(x[:, 0] * 1e-4) * 1e-5), small_axes())
        path = tmp_path / "table.csv"
        obs.export_table_csv(table, path)
        loaded = obs.read_table_csv(path, table.axes, provenance=table.provenance)
        np.testing.assert_array_equal(loaded.values, table.values)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(ValueError, match="magic"):
            obs.read_table(path)


class TestFrozenBaseline:
    def test_matches_exact_rate_at_segment_start(self):
        batt = pt.default_battery()
        # Constant state: frozen parameters are exact, prediction matches the
        # coulomb-counting delta.
        recs = [FakeStep(p_batt=10000.0, p_load=11000.0, u_batt=370.0,
                         r_batt=batt.r_discharge_curve(0.6), p_fc=1000.0, soc=0.6)
                for _ in range(5)]
        preds = obs.frozen_eq20_baseline(recs, dt=0.05, battery=batt)
        expected = pt.soc_rate(batt, 0.6, 10000.0) * 0.05
        np.testing.assert_allclose(preds, expected, rtol=1e-12)

    def test_staleness_grows_between_refreshes(self):
        batt = pt.default_battery()
        socs = np.linspace(0.8, 0.3, 200)
        recs = [FakeStep(p_batt=20000.0, p_load=21000.0, u_batt=370.0,
                         r_batt=0.5, p_fc=1000.0, soc=float(s)) for s in socs]
        preds = obs.frozen_eq20_baseline(recs, dt=1.0, battery=batt, segment_s=1000.0)
        exact = np.array([pt.soc_rate(batt, float(s), 20000.0) * 1.0 for s in socs[:-1]])
        err = np.abs(preds - exact)
        assert err[0] == pytest.approx(0.0, abs=1e-15)
        assert err[-1] > err[1]
