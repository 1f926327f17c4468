"""Plant-model unit tests with independent arithmetic oracles."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcev_ems import powertrain as pt


@pytest.fixture(scope="module")
def plant():
    return pt.default_plant()


@pytest.fixture(scope="module")
def params():
    return pt.default_vehicle_params()


class TestTractiveForce:
    # Oracle values computed by hand from the default constants, g = 9.81:
    #   rolling = 1860 * 9.81 * 0.015            = 273.699 N
    #   drag(10) = 0.5 * 1.18 * 0.3 * 2 * 100    = 35.4 N
    #   inertia(1) = 1.05 * 1860                 = 1953 N

    def test_standstill(self, params):
        assert pt.tractive_force(0.0, 0.0, params) == pytest.approx(273.699, abs=1e-9)

    def test_pure_acceleration(self, params):
        assert pt.tractive_force(0.0, 1.0, params) == pytest.approx(273.699 + 1953.0, abs=1e-9)

    def test_drag_term(self, params):
        assert pt.tractive_force(10.0, 0.0, params) == pytest.approx(273.699 + 35.4, abs=1e-9)

    def test_negative_velocity_rejected(self, params):
        with pytest.raises(ValueError):
            pt.tractive_force(-1.0, 0.0, params)

    @given(v1=st.floats(0.0, 40.0), dv=st.floats(0.01, 5.0), accel=st.floats(0.0, 3.0))
    @settings(max_examples=50, deadline=None)
    def test_strictly_increasing_in_velocity(self, v1, dv, accel):
        params = pt.default_vehicle_params()
        assert pt.tractive_force(v1 + dv, accel, params) > pt.tractive_force(v1, accel, params)


class TestDemandPower:
    def test_zero_velocity(self, params):
        assert pt.demand_power(0.0, 0.0, params, 0.9) == 0.0

    def test_traction_branch(self, params):
        # F(10,0) = 309.099 N; P = 309.099 * 10 / (0.95 * 0.9)
        expected = 309.099 * 10.0 / (0.95 * 0.9)
        assert pt.demand_power(10.0, 0.0, params, 0.9) == pytest.approx(expected, rel=1e-12)

    def test_regeneration_branch(self, params):
        # F = 309.099 - 1.05*1860*2 = -3596.901 N; braking multiplies by the
        # efficiencies instead of dividing.
        expected = (309.099 - 1.05 * 1860.0 * 2.0) * 10.0 * (0.95 * 0.9)
        assert pt.demand_power(10.0, -2.0, params, 0.9) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(-30753.5, abs=0.5)

    def test_invalid_efficiency(self, params):
        with pytest.raises(ValueError):
            pt.demand_power(1.0, 0.0, params, 0.0)


class TestSplitAxlePower:
    def test_paper_ratio(self, params):
        assert pt.split_axle_power(10000.0, params) == (6000.0, 4000.0)

    def test_zero(self, params):
        assert pt.split_axle_power(0.0, params) == (0.0, 0.0)

    def test_regen_same_ratio(self, params):
        front, rear = pt.split_axle_power(-5000.0, params)
        assert front == pytest.approx(-3000.0)
        assert rear == pytest.approx(-2000.0)

    @given(p=st.floats(-1e5, 1e5))
    @settings(max_examples=50, deadline=None)
    def test_parts_sum_exactly(self, p):
        params = pt.default_vehicle_params()
        front, rear = pt.split_axle_power(p, params)
        assert front + rear == p


@pytest.fixture(scope="module")
def motor():
    torque = np.array([0.0, 50.0, 100.0])
    speed = np.array([0.0, 5000.0, 10000.0])
    eff = np.array([[0.70, 0.80, 0.75],
                    [0.85, 0.93, 0.88],
                    [0.80, 0.90, 0.86]])
    return pt.MotorMap("front", torque, speed, eff, gear_ratio=9.0)


class TestMotorEfficiency:

    def test_node_identity(self, motor):
        assert pt.motor_efficiency(motor, 50.0, 5000.0) == pytest.approx(0.93)

    def test_cell_midpoint_is_mean_of_corners(self, motor):
        val = pt.motor_efficiency(motor, 25.0, 2500.0)
        assert val == pytest.approx((0.70 + 0.80 + 0.85 + 0.93) / 4.0)

    def test_torque_sign_symmetry(self, motor):
        assert pt.motor_efficiency(motor, -60.0, 4000.0) == pt.motor_efficiency(motor, 60.0, 4000.0)

    def test_out_of_range_names_axis(self, motor):
        with pytest.raises(pt.RangeError, match="torque"):
            pt.motor_efficiency(motor, 150.0, 4000.0)
        with pytest.raises(pt.RangeError, match="speed"):
            pt.motor_efficiency(motor, 50.0, 11000.0)


class TestFuelCell:
    def test_zero_power_zero_rate(self, plant):
        assert pt.fc_hydrogen_rate(plant.fuel_cell, 0.0) == 0.0

    def test_node_value(self, plant):
        fc = plant.fuel_cell
        node = fc.h2_rate_curve.x[40]
        assert pt.fc_hydrogen_rate(fc, float(node)) == pytest.approx(float(fc.h2_rate_curve.y[40]))

    def test_constant_efficiency_closed_form(self):
        # With eta = 0.5: mdot(30 kW) = 30000 / (1.2e8 * 0.5) kg/s = 0.5 g/s.
        p = np.linspace(0.0, 61560.0, 100)
        lhv = 1.2e8
        rate = np.where(p > 0, p / (lhv * 0.5) * 1000.0, 0.0)
        fc = pt.FuelCellModel(
            p_min=0.0, p_max=61560.0,
            efficiency_curve=pt.Curve1D(p, np.full_like(p, 0.5), name="eta"),
            h2_rate_curve=pt.Curve1D(p, rate, name="mdot"),
            c_h2=1000.0 / (lhv * 0.5), lhv_h2=lhv,
        )
        assert pt.fc_hydrogen_rate(fc, 30000.0) == pytest.approx(0.5, rel=1e-9)

    def test_rate_nondecreasing(self, plant):
        fc = plant.fuel_cell
        powers = np.linspace(0.0, fc.p_max, 200)
        rates = [pt.fc_hydrogen_rate(fc, float(p)) for p in powers]
        assert all(b >= a - 1e-12 for a, b in zip(rates, rates[1:]))

    def test_rate_consistent_with_efficiency_curve(self, plant):
        # mdot ~ P / (LHV * eta(P)) inside the curve sampling tolerance
        fc = plant.fuel_cell
        for p in (10000.0, 30000.0, 55000.0):
            eta = fc.efficiency_curve(p)
            expected = p / (fc.lhv_h2 * eta) * 1000.0
            assert pt.fc_hydrogen_rate(fc, p) == pytest.approx(expected, rel=1e-3)

    def test_out_of_range(self, plant):
        with pytest.raises(pt.RangeError):
            pt.fc_hydrogen_rate(plant.fuel_cell, plant.fuel_cell.p_max * 1.1)


class TestBatteryCurrent:
    def test_zero_power_zero_current(self, plant):
        assert pt.battery_current(plant.battery, 0.5, 0.0) == pytest.approx(0.0, abs=1e-12)

    def test_closed_form_example(self):
        # U = 350 V, R = 0.5 ohm, P = 10 kW: I = 350 - sqrt(350^2 - 4*0.5*1e4)
        soc = np.array([0.0, 1.0])
        batt = pt.BatteryModel(
            capacity_ah=40.0,
            ocv_curve=pt.Curve1D(soc, [350.0, 350.0], name="ocv"),
            r_discharge_curve=pt.Curve1D(soc, [0.5, 0.5], name="rd"),
            r_charge_curve=pt.Curve1D(soc, [0.45, 0.45], name="rc"),
            p_charge_min=-30000.0, p_discharge_max=45000.0,
        )
        i = pt.battery_current(batt, 0.5, 10000.0)
        assert i == pytest.approx(350.0 - math.sqrt(350.0**2 - 4 * 0.5 * 10000.0), rel=1e-12)
        assert i == pytest.approx(29.8438, abs=1e-3)

    def test_max_power_double_root(self):
        soc = np.array([0.0, 1.0])
        batt = pt.BatteryModel(
            capacity_ah=40.0,
            ocv_curve=pt.Curve1D(soc, [350.0, 350.0], name="ocv"),
            r_discharge_curve=pt.Curve1D(soc, [0.5, 0.5], name="rd"),
            r_charge_curve=pt.Curve1D(soc, [0.45, 0.45], name="rc"),
            p_charge_min=-30000.0, p_discharge_max=61250.0,
        )
        p_max = 350.0**2 / (4 * 0.5)
        assert pt.battery_current(batt, 0.5, p_max) == pytest.approx(350.0 / (2 * 0.5), rel=1e-9)

    def test_infeasible_power(self, plant):
        with pytest.raises(pt.InfeasiblePowerError):
            pt.battery_current(plant.battery, 0.1, 60000.0)

    @given(soc=st.floats(0.1, 0.9), p=st.floats(-30000.0, 40000.0))
    @settings(max_examples=200, deadline=None)
    def test_power_round_trip(self, soc, p):
        batt = pt.default_battery()
        i = pt.battery_current(batt, soc, p)
        u = batt.ocv_curve(soc)
        r = batt.resistance(soc, p)
        recovered = i * (u - i * r)
        assert recovered == pytest.approx(p, rel=1e-9, abs=1e-6)


class TestSocStep:
    def test_zero_current(self, plant):
        soc, clamped = pt.soc_step(plant.battery, 0.5, 0.0, 1.0)
        assert soc == 0.5 and not clamped

    def test_full_capacity_drain(self, plant):
        # 40 A for 3600 s on a 40 Ah pack is exactly one capacity.
        soc, clamped = pt.soc_step(plant.battery, 0.9, 40.0, 3600.0, floor=-0.5, ceiling=1.5)
        assert soc == pytest.approx(-0.1, abs=1e-12)

    def test_single_step_delta(self, plant):
        soc, _ = pt.soc_step(plant.battery, 0.5, 40.0, 0.05)
        assert 0.5 - soc == pytest.approx(40.0 * 0.05 / (3600.0 * 40.0), rel=1e-12)
        assert 0.5 - soc == pytest.approx(1.38889e-5, rel=1e-4)

    def test_clamp_flag(self, plant):
        soc, clamped = pt.soc_step(plant.battery, 0.101, 4000.0, 10.0)
        assert clamped and soc == 0.1


class TestCompositeEfficiency:
    def test_within_unit_interval(self, plant):
        eta = pt.composite_motor_efficiency(plant.motor_front, plant.motor_rear,
                                            2000.0, 10.0, plant.params)
        assert 0.0 < eta < 1.0

    def test_regen_uses_multiplicative_form(self, plant):
        eta_f = pt.axle_efficiency(plant.motor_front, -1200.0, 10.0, plant.params)
        eta_r = pt.axle_efficiency(plant.motor_rear, -800.0, 10.0, plant.params)
        expected = 0.6 * eta_f + 0.4 * eta_r
        got = pt.composite_motor_efficiency(plant.motor_front, plant.motor_rear,
                                            -2000.0, 10.0, plant.params)
        assert got == pytest.approx(expected, rel=1e-12)


class TestValidation:
    def test_split_must_sum_to_one(self):
        with pytest.raises(ValueError):
            pt.VehicleParams(front_split=0.7, rear_split=0.4)

    def test_ocv_must_be_nondecreasing(self):
        soc = np.array([0.0, 0.5, 1.0])
        with pytest.raises(ValueError, match="nondecreasing"):
            pt.BatteryModel(
                capacity_ah=40.0,
                ocv_curve=pt.Curve1D(soc, [350.0, 340.0, 360.0], name="ocv"),
                r_discharge_curve=pt.Curve1D(soc, [0.5, 0.5, 0.5], name="rd"),
                r_charge_curve=pt.Curve1D(soc, [0.45, 0.45, 0.45], name="rc"),
                p_charge_min=-30000.0, p_discharge_max=40000.0,
            )

    def test_charge_band_below_discharge_band(self):
        soc = np.array([0.0, 1.0])
        with pytest.raises(ValueError, match="charge resistance"):
            pt.BatteryModel(
                capacity_ah=40.0,
                ocv_curve=pt.Curve1D(soc, [350.0, 360.0], name="ocv"),
                r_discharge_curve=pt.Curve1D(soc, [0.45, 0.45], name="rd"),
                r_charge_curve=pt.Curve1D(soc, [0.5, 0.5], name="rc"),
                p_charge_min=-30000.0, p_discharge_max=40000.0,
            )

    def test_curve_requires_increasing_abscissae(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            pt.Curve1D(np.array([0.0, 0.0, 1.0]), np.array([1.0, 2.0, 3.0]))


class TestMapIO:
    def test_curve_round_trip(self, tmp_path, plant):
        path = tmp_path / "ocv.csv"
        pt.save_curve_csv(plant.battery.ocv_curve, path, header=("soc", "ocv_v"))
        loaded = pt.load_curve_csv(path, name="ocv")
        np.testing.assert_array_equal(loaded.x, plant.battery.ocv_curve.x)
        np.testing.assert_array_equal(loaded.y, plant.battery.ocv_curve.y)

    def test_motor_map_round_trip(self, tmp_path, plant):
        path = tmp_path / "front.csv"
        pt.save_motor_map_csv(plant.motor_front, path)
        loaded = pt.load_motor_map_csv(path, "front", gear_ratio=plant.motor_front.gear_ratio)
        np.testing.assert_allclose(loaded.efficiency, plant.motor_front.efficiency)

    def test_motor_map_rejects_ragged_grid(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("torque_nm,speed_rpm,eff\n0,0,0.7\n0,100,0.8\n50,0,0.75\n")
        with pytest.raises(ValueError, match="rectangular"):
            pt.load_motor_map_csv(path, "front")

    def test_plant_config_overrides(self, tmp_path):
        import json
        cfg = {"vehicle": {"mass": 2000.0}, "battery": {"capacity_ah": 50.0}}
        path = tmp_path / "veh.json"
        path.write_text(json.dumps(cfg))
        plant = pt.load_plant_config(path)
        assert plant.params.mass == 2000.0
        assert plant.battery.capacity_ah == 50.0
        assert plant.params.drag_coeff == 0.3  # untouched default
