"""Arc-length curvature-profile tracks and centerline geometry queries.

A track is a piecewise-linear curvature profile kappa(s) plus lane width and
a closed flag. The world-frame centerline is recovered by integrating
heading' = kappa, x' = cos(heading), y' = sin(heading) with a fixed-step
4th-order scheme (exact trapezoid for the heading, Simpson for position).

Sign conventions, used consistently across the package:
  * yaw is counter-clockwise positive,
  * the left normal of the tangent is (-sin psi, cos psi),
  * lateral offset delta is positive when the queried point is to the
    RIGHT of the centerline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KAPPA_LIMIT = 0.2
DEFAULT_LANE_WIDTH = 4.0
CLOSURE_POS_TOL_FRAC = 1e-3
CLOSURE_PSI_TOL = 1e-3


class OutOfCorridorError(Exception):
    """Queried point is farther than 2 lane widths from the centerline."""

    def __init__(self, s: float, delta: float):
        super().__init__(f"point is {delta:+.2f} m from centerline at s={s:.1f} m (outside corridor)")
        self.s = s
        self.delta = delta


@dataclass
class CurvatureTrack:
    stations: np.ndarray      # ascending arc lengths, starting at 0 (m)
    curvatures: np.ndarray    # kappa at each station (1/m), linear between
    lane_width: float = DEFAULT_LANE_WIDTH
    closed: bool = False
    name: str = ""
    _centerlines: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.stations = np.asarray(self.stations, dtype=np.float64)
        self.curvatures = np.asarray(self.curvatures, dtype=np.float64)
        if self.stations.ndim != 1 or self.stations.shape != self.curvatures.shape:
            raise ValueError("stations and curvatures must be 1-D arrays of equal length")
        if len(self.stations) < 2:
            raise ValueError("a track needs at least two stations")
        if self.stations[0] != 0.0:
            raise ValueError("stations must start at 0")
        if not np.all(np.diff(self.stations) > 0):
            raise ValueError("stations must be strictly increasing")
        if np.max(np.abs(self.curvatures)) > KAPPA_LIMIT:
            raise ValueError(f"|kappa| exceeds sanity bound {KAPPA_LIMIT}")
        if self.lane_width <= 0:
            raise ValueError("lane_width must be positive")

    @property
    def length(self) -> float:
        return float(self.stations[-1])

    @property
    def min_spacing(self) -> float:
        return float(np.min(np.diff(self.stations)))

    def kappa_at(self, s):
        s = np.mod(s, self.length) if self.closed else np.clip(s, 0.0, self.length)
        return np.interp(s, self.stations, self.curvatures)

    def total_turn(self) -> float:
        """Integral of kappa over the track (exact for the linear profile)."""
        return float(np.trapezoid(self.curvatures, self.stations))

    def centerline(self, ds: float = 0.5) -> "Centerline":
        key = round(ds, 9)
        if key not in self._centerlines:
            self._centerlines[key] = build_centerline(self, ds)
        return self._centerlines[key]

    def project(self, position, s_hint: float | None = None) -> "Projection":
        return self.centerline().project(position, s_hint)


@dataclass
class TrackFrame:
    s: float
    position: tuple[float, float]
    tangent_heading: float
    curvature: float


@dataclass
class Projection:
    s: float
    delta: float              # signed, positive right of centerline
    tangent_heading: float
    curvature: float


def _integrate_profile(stations, curvatures, length, ds, closed):
    """Fixed-step 4th-order integration of the profile; returns node arrays."""
    n_steps = max(int(math.ceil(length / ds - 1e-9)), 1)
    s = np.linspace(0.0, length, n_steps + 1)
    h = np.diff(s)

    def kap(q):
        qq = np.mod(q, length) if closed else np.clip(q, 0.0, length)
        return np.interp(qq, stations, curvatures)

    k_node = kap(s)
    k_mid = kap(s[:-1] + h / 2.0)
    # heading: trapezoid is exact for the piecewise-linear profile
    psi_mid_inc = (k_node[:-1] + k_mid) / 2.0 * (h / 2.0)
    psi_inc = (k_node[:-1] + k_node[1:]) / 2.0 * h
    psi = np.concatenate(([0.0], np.cumsum(psi_inc)))
    psi_mid = psi[:-1] + psi_mid_inc
    # position: Simpson quadrature per step (4th order)
    x_inc = h / 6.0 * (np.cos(psi[:-1]) + 4.0 * np.cos(psi_mid) + np.cos(psi[1:]))
    y_inc = h / 6.0 * (np.sin(psi[:-1]) + 4.0 * np.sin(psi_mid) + np.sin(psi[1:]))
    x = np.concatenate(([0.0], np.cumsum(x_inc)))
    y = np.concatenate(([0.0], np.cumsum(y_inc)))
    return s, x, y, psi, k_node


class Centerline:
    """Sampled world-frame centerline with exact-profile local refinement."""

    def __init__(self, track: CurvatureTrack, ds: float):
        if ds <= 0:
            raise ValueError("ds must be positive")
        if ds > track.min_spacing + 1e-12:
            raise ValueError(f"ds={ds} exceeds the minimum station spacing {track.min_spacing}")
        self.track = track
        self.ds = ds
        self.s, self.x, self.y, self.psi, self.kappa = _integrate_profile(
            track.stations, track.curvatures, track.length, ds, track.closed
        )

    def __len__(self) -> int:
        return len(self.s)

    def frames(self) -> list[TrackFrame]:
        return [
            TrackFrame(float(si), (float(xi), float(yi)), float(pi), float(ki))
            for si, xi, yi, pi, ki in zip(self.s, self.x, self.y, self.psi, self.kappa)
        ]

    def frame_at(self, s: float) -> tuple[float, float, float, float]:
        """(x, y, psi, kappa) at arc length s, refined from the grid node below."""
        length = self.track.length
        if self.track.closed:
            s = s % length
        else:
            s = min(max(s, 0.0), length)
        i = min(int(s / (length / (len(self.s) - 1))), len(self.s) - 2)
        # guard against float edge cases
        while i > 0 and self.s[i] > s:
            i -= 1
        while i < len(self.s) - 2 and self.s[i + 1] <= s:
            i += 1
        h = s - self.s[i]
        if h == 0.0:
            return float(self.x[i]), float(self.y[i]), float(self.psi[i]), float(self.kappa[i])
        k0 = self.kappa[i]
        km = float(self.track.kappa_at(self.s[i] + h / 2.0))
        k1 = float(self.track.kappa_at(s))
        psi0 = self.psi[i]
        psi_m = psi0 + (k0 + km) / 2.0 * (h / 2.0)
        psi1 = psi0 + (k0 + k1) / 2.0 * h
        x = self.x[i] + h / 6.0 * (math.cos(psi0) + 4.0 * math.cos(psi_m) + math.cos(psi1))
        y = self.y[i] + h / 6.0 * (math.sin(psi0) + 4.0 * math.sin(psi_m) + math.sin(psi1))
        return float(x), float(y), float(psi1), k1

    def project(self, position, s_hint: float | None = None) -> Projection:
        """Closest-point projection; seed from ``s_hint`` for continuity.

        Raises :class:`OutOfCorridorError` when the point is farther than two
        lane widths from the centerline.
        """
        px, py = float(position[0]), float(position[1])
        length = self.track.length
        n = len(self.s) - 1  # last node duplicates node 0 for closed tracks
        if s_hint is None:
            d2 = (self.x - px) ** 2 + (self.y - py) ** 2
            i0 = int(np.argmin(d2))
        else:
            hint = s_hint % length if self.track.closed else min(max(s_hint, 0.0), length)
            center = int(round(hint / length * n))
            window = max(int(math.ceil(8.0 / self.ds)), 4)
            offs = np.arange(-window, window + 1)
            idx = (center + offs) % n if self.track.closed else np.clip(center + offs, 0, n)
            d2 = (self.x[idx] - px) ** 2 + (self.y[idx] - py) ** 2
            i0 = int(idx[int(np.argmin(d2))])
        s = float(self.s[i0])

        for _ in range(12):
            x, y, psi, kappa = self.frame_at(s)
            ex, ey = px - x, py - y
            tangential = ex * math.cos(psi) + ey * math.sin(psi)
            normal = -ex * math.sin(psi) + ey * math.cos(psi)  # along left normal
            if abs(tangential) < 1e-10:
                break
            dg = -1.0 + kappa * normal
            if abs(dg) < 0.2:
                dg = -1.0
            step = tangential / -dg
            step = min(max(step, -4.0 * self.ds - 1.0), 4.0 * self.ds + 1.0)
            s = s + step
            if self.track.closed:
                s %= length
            else:
                s = min(max(s, 0.0), length)

        x, y, psi, kappa = self.frame_at(s)
        ex, ey = px - x, py - y
        delta = ex * math.sin(psi) - ey * math.cos(psi)  # right of centerline positive
        if abs(delta) > 2.0 * self.track.lane_width:
            raise OutOfCorridorError(s, delta)
        return Projection(s=s, delta=float(delta), tangent_heading=float(psi), curvature=float(kappa))


def build_centerline(track: CurvatureTrack, ds: float) -> Centerline:
    """Integrate the curvature profile and sample frames every ``ds`` meters."""
    return Centerline(track, ds)


def project(track: CurvatureTrack, position, s_hint: float | None = None) -> Projection:
    return track.project(position, s_hint)


# ---------------------------------------------------------------------------
# closure correction


def _endpoint_gap(track: CurvatureTrack, ds: float = 1.0):
    s, x, y, psi, _ = _integrate_profile(track.stations, track.curvatures, track.length, min(ds, track.min_spacing), track.closed)
    winding = round((psi[-1] - psi[0]) / (2.0 * math.pi))
    dpsi = psi[-1] - psi[0] - 2.0 * math.pi * winding
    return x[-1] - x[0], y[-1] - y[0], dpsi


def close_track(track: CurvatureTrack) -> CurvatureTrack:
    """Spread a low-order curvature adjustment over the final 5% of arc
    length so a closed track's reconstructed endpoint meets its start.

    No-op when the raw profile already closes tightly. Raises if even the
    corrected profile misses the closure tolerance (1e-3 * length position,
    1e-3 rad heading) or needs curvature beyond the sanity bound.
    """
    if not track.closed:
        return track
    length = track.length
    dx, dy, dpsi = _endpoint_gap(track)
    if math.hypot(dx, dy) < 1e-6 * length and abs(dpsi) < 1e-7:
        return track

    window = track.stations >= 0.95 * length
    if window.sum() < 4:
        window = track.stations >= track.stations[max(len(track.stations) - 5, 0)]
    u = (track.stations[window] - track.stations[window][0]) / (length - track.stations[window][0])
    base = track.curvatures.copy()
    ds = min(1.0, track.min_spacing)

    def adjusted(theta):
        kap = base.copy()
        kap[window] = base[window] + theta[0] + theta[1] * u + theta[2] * u * u
        return kap

    def residual(theta):
        kap = adjusted(theta)
        s, x, y, psi, _ = _integrate_profile(track.stations, kap, length, ds, True)
        winding = round((psi[-1] - psi[0]) / (2.0 * math.pi))
        return np.array([x[-1] - x[0], y[-1] - y[0], psi[-1] - psi[0] - 2.0 * math.pi * winding])

    def cost(r):
        return float(r @ r)

    theta = np.zeros(3)
    r = residual(theta)
    lam = 1e-6
    for _ in range(30):
        if math.hypot(r[0], r[1]) < 1e-5 * length and abs(r[2]) < 1e-6:
            break
        jac = np.zeros((3, 3))
        eps = 1e-7
        for j in range(3):
            tp = theta.copy()
            tp[j] += eps
            jac[:, j] = (residual(tp) - r) / eps
        jtj = jac.T @ jac
        # Levenberg damping: retry with heavier damping until the step helps
        improved = False
        for _ in range(12):
            step = np.linalg.solve(jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-12)), -jac.T @ r)
            r_new = residual(theta + step)
            if cost(r_new) < cost(r):
                theta = theta + step
                r = r_new
                lam = max(lam / 4.0, 1e-9)
                improved = True
                break
            lam *= 8.0
        if not improved:
            break

    kap = adjusted(theta)
    if np.max(np.abs(kap)) > KAPPA_LIMIT:
        raise ValueError("closure correction failed: required curvature exceeds the sanity bound")
    if math.hypot(r[0], r[1]) > CLOSURE_POS_TOL_FRAC * length or abs(r[2]) > CLOSURE_PSI_TOL:
        raise ValueError(
            f"closure correction failed: position gap {math.hypot(r[0], r[1]):.3f} m, heading gap {r[2]:.2e} rad"
        )
    return CurvatureTrack(track.stations.copy(), kap, track.lane_width, True, track.name)


# ---------------------------------------------------------------------------
# presets


def _fourier_loop_stations(length_target, harmonics, chicane=None, station_ds=4.0, n_phi=32768):
    """Closed loop authored in world space as a radially perturbed circle.

    ``harmonics`` is a list of (k, relative amplitude, phase). ``chicane``
    is (arc_fraction, window_rad, cycles_per_rad, relative amplitude) for a
    gaussian-windowed high-frequency wiggle. The loop is built at unit base
    radius, then scaled so the total length lands exactly on target; the
    curvature profile is sampled every ``station_ds`` meters.
    """
    phi = np.linspace(0.0, 2.0 * math.pi, n_phi, endpoint=False)
    r = np.ones_like(phi)
    r1 = np.zeros_like(phi)
    r2 = np.zeros_like(phi)
    for k, a, p in harmonics:
        r += a * np.cos(k * phi + p)
        r1 += -a * k * np.sin(k * phi + p)
        r2 += -a * k * k * np.cos(k * phi + p)

    def add_chicane(center_phi, width, nu, amp):
        u = phi - center_phi
        u = np.mod(u + math.pi, 2.0 * math.pi) - math.pi
        g = np.exp(-(u * u) / (2.0 * width * width))
        g1 = -u / (width * width) * g
        g2 = (u * u / width**4 - 1.0 / (width * width)) * g
        c = np.cos(nu * u)
        c1 = -nu * np.sin(nu * u)
        c2 = -nu * nu * np.cos(nu * u)
        nonlocal r, r1, r2
        r = r + amp * g * c
        r1 = r1 + amp * (g1 * c + g * c1)
        r2 = r2 + amp * (g2 * c + 2.0 * g1 * c1 + g * c2)

    chicane_phi = None
    if chicane is not None:
        arc_frac, width, nu, amp = chicane
        # place by arc fraction of the unperturbed loop first, then refine
        speed0 = np.sqrt((r1 * np.cos(phi) - r * np.sin(phi)) ** 2 + (r1 * np.sin(phi) + r * np.cos(phi)) ** 2)
        s0 = np.concatenate(([0.0], np.cumsum((speed0[1:] + speed0[:-1]) / 2.0 * np.diff(phi))))
        target = arc_frac * (s0[-1] + speed0[-1] * (phi[1] - phi[0]))
        chicane_phi = float(np.interp(target, s0, phi))
        add_chicane(chicane_phi, width, nu, amp)

    x1 = r1 * np.cos(phi) - r * np.sin(phi)
    y1 = r1 * np.sin(phi) + r * np.cos(phi)
    x2 = (r2 - r) * np.cos(phi) - 2.0 * r1 * np.sin(phi)
    y2 = (r2 - r) * np.sin(phi) + 2.0 * r1 * np.cos(phi)
    speed = np.hypot(x1, y1)
    kappa_u = (x1 * y2 - y1 * x2) / speed**3
    dphi = phi[1] - phi[0]
    s_u = np.concatenate(([0.0], np.cumsum((speed[1:] + speed[:-1]) / 2.0 * dphi)))
    length_u = s_u[-1] + (speed[-1] + speed[0]) / 2.0 * dphi  # wrap segment
    scale = length_target / length_u

    n_st = int(round(length_target / station_ds))
    s_st = np.linspace(0.0, length_target, n_st + 1)
    kappa_st = np.interp(np.minimum(s_st / scale, s_u[-1]), s_u, kappa_u) / scale
    kappa_st[-1] = kappa_st[0]  # wrap continuity
    return s_st, kappa_st


_PRESET_CACHE: dict = {}


def make_preset_track(name: str, kappa: float = 0.01, lane_width: float = DEFAULT_LANE_WIDTH) -> CurvatureTrack:
    """Named tracks: track7_like, track8_like, straight, circle, s_bend.

    ``circle`` uses the ``kappa`` argument; the two *_like loops are
    hand-authored profiles matching their stated lengths and curvature
    features, closed by :func:`close_track`.
    """
    key = (name, round(kappa, 12), round(lane_width, 9))
    if key in _PRESET_CACHE:
        return _PRESET_CACHE[key]

    if name == "straight":
        track = CurvatureTrack(np.array([0.0, 1000.0]), np.zeros(2), lane_width, closed=False, name=name)
    elif name == "circle":
        if kappa == 0.0:
            raise ValueError("circle preset needs nonzero kappa")
        length = 2.0 * math.pi / abs(kappa)
        track = CurvatureTrack(np.array([0.0, length]), np.array([kappa, kappa]), lane_width, closed=True, name=name)
    elif name == "s_bend":
        s = np.array([0.0, 100.0, 150.0, 250.0, 350.0, 450.0, 500.0, 600.0])
        k = np.array([0.0, 0.0, 0.02, 0.02, -0.02, -0.02, 0.0, 0.0])
        track = CurvatureTrack(s, k, lane_width, closed=False, name=name)
    elif name == "track7_like":
        s_st, k_st = _fourier_loop_stations(
            2843.0,
            harmonics=[(3, 0.1442, 0.9), (5, 0.1191, 2.3), (8, 0.0652, 4.1), (11, 0.0351, 5.4)],
        )
        track = close_track(CurvatureTrack(s_st, k_st, lane_width, closed=True, name=name))
    elif name == "track8_like":
        s_st, k_st = _fourier_loop_stations(
            3919.0,
            harmonics=[(2, 0.136, 0.4), (4, 0.0638, 1.7), (7, 0.0425, 3.6), (10, 0.017, 5.0)],
            chicane=(2800.0 / 3919.0, 0.11, 55.0, 0.0058),
        )
        track = close_track(CurvatureTrack(s_st, k_st, lane_width, closed=True, name=name))
    else:
        raise ValueError(f"unknown preset {name!r}")

    _PRESET_CACHE[key] = track
    return track


def parse_track_spec(spec: str, lane_width: float = DEFAULT_LANE_WIDTH) -> CurvatureTrack:
    """Parse a CLI-style track string: preset name, ``circle:<kappa>``, or a path."""
    if spec.startswith("circle:"):
        return make_preset_track("circle", kappa=float(spec.split(":", 1)[1]), lane_width=lane_width)
    if spec in ("straight", "circle", "s_bend", "track7_like", "track8_like"):
        return make_preset_track(spec, lane_width=lane_width)
    return read_track(spec)


# ---------------------------------------------------------------------------
# file formats


def write_track(path, track: CurvatureTrack) -> None:
    """Structured text: header lines then one ``s kappa`` pair per line."""
    lines = [
        "# mtdrive track v1",
        f"lane_width {track.lane_width!r}",
        f"closed {int(track.closed)}",
        f"name {track.name}" if track.name else "name -",
    ]
    for s, k in zip(track.stations, track.curvatures):
        lines.append(f"{float(s)!r} {float(k)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_track(path) -> CurvatureTrack:
    text = Path(path).read_text().strip().split("\n")
    if not text or not text[0].startswith("# mtdrive track v1"):
        raise ValueError(f"{path}: not a track file")
    lane_width = None
    closed = None
    name = ""
    rows = []
    for line in text[1:]:
        parts = line.split()
        if parts[0] == "lane_width":
            lane_width = float(parts[1])
        elif parts[0] == "closed":
            closed = bool(int(parts[1]))
        elif parts[0] == "name":
            name = "" if parts[1] == "-" else parts[1]
        else:
            rows.append((float(parts[0]), float(parts[1])))
    if lane_width is None or closed is None or not rows:
        raise ValueError(f"{path}: incomplete track file")
    s = np.array([r[0] for r in rows])
    k = np.array([r[1] for r in rows])
    track = CurvatureTrack(s, k, lane_width, closed, name)
    return close_track(track) if closed else track


def export_centerline_csv(path, centerline: Centerline) -> None:
    lines = ["s,x,y,psi,kappa"]
    for s, x, y, psi, k in zip(centerline.s, centerline.x, centerline.y, centerline.psi, centerline.kappa):
        lines.append(f"{float(s)!r},{float(x)!r},{float(y)!r},{float(psi)!r},{float(k)!r}")
    Path(path).write_text("\n".join(lines) + "\n")
