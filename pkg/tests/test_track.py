import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtdrive import track as tk


class TestBuildCenterline:
    def test_straight_segment(self):
        t = tk.CurvatureTrack(np.array([0.0, 100.0]), np.zeros(2))
        cl = tk.build_centerline(t, ds=0.5)
        assert cl.x[-1] == pytest.approx(100.0, abs=1e-9)
        assert cl.y[-1] == pytest.approx(0.0, abs=1e-12)
        assert cl.psi[-1] == 0.0

    def test_circle_closes(self):
        kappa = 0.03
        t = tk.make_preset_track("circle", kappa=kappa)
        cl = tk.build_centerline(t, ds=0.2)
        assert math.hypot(cl.x[-1] - cl.x[0], cl.y[-1] - cl.y[0]) < 1e-6
        # radius check: center is at (0, 1/kappa)
        r = np.hypot(cl.x, cl.y - 1.0 / kappa)
        np.testing.assert_allclose(r, 1.0 / kappa, atol=1e-6)

    def test_quarter_circle_heading(self):
        t = tk.CurvatureTrack(np.array([0.0, 52.36]), np.array([0.03, 0.03]))
        cl = tk.build_centerline(t, ds=0.5)
        assert cl.psi[-1] == pytest.approx(0.03 * 52.36, abs=1e-12)
        assert cl.psi[-1] == pytest.approx(1.5708, abs=1e-3)

    def test_heading_equals_curvature_integral(self):
        t = tk.make_preset_track("s_bend")
        cl = tk.build_centerline(t, ds=1.0)
        integral = np.concatenate(([0.0], np.cumsum((cl.kappa[1:] + cl.kappa[:-1]) / 2.0 * np.diff(cl.s))))
        np.testing.assert_allclose(cl.psi, integral, atol=1e-9)

    def test_ds_validation(self):
        t = tk.CurvatureTrack(np.array([0.0, 10.0, 20.0]), np.zeros(3))
        with pytest.raises(ValueError):
            tk.build_centerline(t, ds=0.0)
        with pytest.raises(ValueError):
            tk.build_centerline(t, ds=11.0)


class TestTrackValidation:
    def test_rejects_unsorted_stations(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            tk.CurvatureTrack(np.array([0.0, 5.0, 5.0]), np.zeros(3))

    def test_rejects_nonzero_start(self):
        with pytest.raises(ValueError, match="start at 0"):
            tk.CurvatureTrack(np.array([1.0, 5.0]), np.zeros(2))

    def test_rejects_extreme_curvature(self):
        with pytest.raises(ValueError, match="sanity bound"):
            tk.CurvatureTrack(np.array([0.0, 5.0]), np.array([0.0, 0.5]))


class TestProject:
    def test_point_on_centerline(self):
        t = tk.make_preset_track("straight")
        p = t.project((10.0, 0.0))
        assert p.s == pytest.approx(10.0, abs=1e-9)
        assert p.delta == pytest.approx(0.0, abs=1e-12)

    def test_right_of_straight_track(self):
        t = tk.make_preset_track("straight")
        p = t.project((10.0, -1.0))
        assert p.s == pytest.approx(10.0, abs=1e-9)
        assert p.delta == pytest.approx(1.0, abs=1e-12)
        assert p.tangent_heading == 0.0

    def test_circle_interior_point(self):
        t = tk.make_preset_track("circle", kappa=0.03)
        # circle center (0, 1/k); a point at radius R-1 is 1 m left of centerline
        cx, cy, radius = 0.0, 1.0 / 0.03, 1.0 / 0.03
        angle = -0.7
        px = cx + (radius - 1.0) * math.sin(-angle)
        py = cy - (radius - 1.0) * math.cos(angle)
        p = t.project((px, py))
        assert abs(p.delta) == pytest.approx(1.0, abs=1e-6)
        assert p.delta < 0  # interior = left of a CCW circle

    def test_out_of_corridor_raises(self):
        t = tk.make_preset_track("straight")
        with pytest.raises(tk.OutOfCorridorError):
            t.project((10.0, -9.0))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_normal_offset_round_trip(self, seed):
        r = np.random.default_rng(seed)
        t = tk.make_preset_track("track7_like")
        cl = t.centerline()
        s0 = float(r.uniform(0, t.length))
        d = float(r.uniform(-t.lane_width, t.lane_width))
        x, y, psi, _ = cl.frame_at(s0)
        px = x + d * math.sin(psi)
        py = y - d * math.cos(psi)
        p = cl.project((px, py), s_hint=s0)
        wrapped = min(abs(p.s - s0), t.length - abs(p.s - s0))
        assert wrapped < 1e-4
        assert p.delta == pytest.approx(d, abs=1e-4)


class TestPresets:
    def test_track7_like_pins(self):
        t = tk.make_preset_track("track7_like")
        assert t.length == pytest.approx(2843.0, abs=1.0)
        assert np.abs(t.curvatures).max() == pytest.approx(0.030, abs=0.001)
        assert t.closed

    def test_track8_like_pins(self):
        t = tk.make_preset_track("track8_like")
        assert t.length == pytest.approx(3919.0, abs=1.0)
        assert np.abs(t.curvatures).max() > np.abs(tk.make_preset_track("track7_like").curvatures).max()

    def test_track8_chicane_sign_flip(self):
        t = tk.make_preset_track("track8_like")
        sel = (t.stations > 2650) & (t.stations < 2950)
        ss, ks = t.stations[sel], t.curvatures[sel]
        found = False
        for i in range(len(ss)):
            ahead = (ss > ss[i]) & (ss <= ss[i] + 100.0)
            if np.any((ks[ahead] * ks[i] < 0) & (np.abs(ks[ahead] - ks[i]) > 0.04)):
                found = True
                break
        assert found, "no kappa sign flip with |dk| > 0.04 within 100 m near s=2800"

    @pytest.mark.parametrize("name", ["track7_like", "track8_like"])
    def test_closed_presets_wind_once(self, name):
        t = tk.make_preset_track(name)
        assert t.total_turn() == pytest.approx(2.0 * math.pi, abs=1e-3)

    @pytest.mark.parametrize("name", ["track7_like", "track8_like"])
    def test_closure_invariant(self, name):
        t = tk.make_preset_track(name)
        dx, dy, dpsi = tk._endpoint_gap(t)
        assert math.hypot(dx, dy) < 1e-3 * t.length
        assert abs(dpsi) < 1e-3

    def test_circle_turn(self):
        t = tk.make_preset_track("circle", kappa=-0.02)
        assert t.total_turn() == pytest.approx(-2.0 * math.pi, abs=1e-9)

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match="unknown preset"):
            tk.make_preset_track("figure8")

    def test_parse_track_spec_circle(self):
        t = tk.parse_track_spec("circle:0.025")
        assert t.length == pytest.approx(2 * math.pi / 0.025)


class TestClosure:
    def test_open_track_untouched(self):
        t = tk.make_preset_track("s_bend")
        assert tk.close_track(t) is t

    def test_corrects_a_sloppy_loop(self):
        # a circle profile with a 1% curvature deficit over the first stations
        s = np.linspace(0.0, 400.0, 81)
        k = np.full(81, 2.0 * math.pi / 400.0)
        k[:10] *= 0.99  # breaks closure
        raw = tk.CurvatureTrack(s, k, closed=True)
        dx, dy, dpsi = tk._endpoint_gap(raw)
        assert math.hypot(dx, dy) > 1e-3 * raw.length or abs(dpsi) > 1e-3
        fixed = tk.close_track(raw)
        dx, dy, dpsi = tk._endpoint_gap(fixed)
        assert math.hypot(dx, dy) < 1e-3 * fixed.length
        assert abs(dpsi) < 1e-3

    def test_unreachable_gap_raises(self):
        # a 10% deficit early in the lap cannot be closed from the last 5%
        s = np.linspace(0.0, 400.0, 81)
        k = np.full(81, 2.0 * math.pi / 400.0)
        k[:10] *= 0.9
        with pytest.raises(ValueError, match="closure correction failed"):
            tk.close_track(tk.CurvatureTrack(s, k, closed=True))


class TestFileFormats:
    def test_track_round_trip(self, tmp_path):
        t = tk.make_preset_track("s_bend")
        path = tmp_path / "sbend.track"
        tk.write_track(path, t)
        back = tk.read_track(path)
        np.testing.assert_array_equal(back.stations, t.stations)
        np.testing.assert_array_equal(back.curvatures, t.curvatures)
        assert back.lane_width == t.lane_width
        assert back.closed == t.closed

    def test_read_rejects_junk(self, tmp_path):
        p = tmp_path / "x.track"
        p.write_text("not a track\n")
        with pytest.raises(ValueError, match="not a track file"):
            tk.read_track(p)

    def test_centerline_csv_export(self, tmp_path):
        t = tk.make_preset_track("straight")
        cl = t.centerline(ds=10.0)
        path = tmp_path / "line.csv"
        tk.export_centerline_csv(path, cl)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "s,x,y,psi,kappa"
        assert len(lines) == len(cl.s) + 1
