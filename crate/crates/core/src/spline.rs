//! Waypoint paths: natural cubic splines against a chord-length parameter,
//! reparameterized by arc length, with signed cross-track error queries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec2;

/// Resolution of the numeric arc-length table, meters.
const ARC_RESOLUTION: f64 = 0.01;
/// Spacing of the coarse nearest-point grid, meters.
const COARSE_GRID: f64 = 0.1;

/// Natural cubic spline through (t_i, y_i) knots.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CubicSpline {
    ts: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots (natural boundary: zero at the ends).
    m: Vec<f64>,
}

impl CubicSpline {
    fn natural(ts: Vec<f64>, ys: Vec<f64>) -> Self {
        let n = ts.len();
        debug_assert!(n >= 2);
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second-derivative system.
            let mut sub = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut sup = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = ts[i] - ts[i - 1];
                let h1 = ts[i + 1] - ts[i];
                sub[i] = h0;
                diag[i] = 2.0 * (h0 + h1);
                sup[i] = h1;
                rhs[i] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
            }
            for i in 2..n - 1 {
                let w = sub[i] / diag[i - 1];
                diag[i] -= w * sup[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[n - 2] = rhs[n - 2] / diag[n - 2];
            for i in (1..n - 2).rev() {
                m[i] = (rhs[i] - sup[i] * m[i + 1]) / diag[i];
            }
        }
        CubicSpline { ts, ys, m }
    }

    fn segment(&self, t: f64) -> usize {
        // rightmost segment with ts[i] <= t, clamped
        match self.ts.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(self.ts.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.ts.len() - 2),
        }
    }

    fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.ts[i + 1] - self.ts[i];
        let a = (self.ts[i + 1] - t) / h;
        let b = (t - self.ts[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    fn deriv(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.ts[i + 1] - self.ts[i];
        let a = (self.ts[i + 1] - t) / h;
        let b = (t - self.ts[i]) / h;
        (self.ys[i + 1] - self.ys[i]) / h
            + ((3.0 * b * b - 1.0) * self.m[i + 1] - (3.0 * a * a - 1.0) * self.m[i]) * h / 6.0
    }
}

/// An arc-length-parameterized planar path through waypoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<Vec2>,
    spline_x: CubicSpline,
    spline_y: CubicSpline,
    /// Lookup from arc length to chord parameter, ARC_RESOLUTION apart.
    arc_table: Vec<(f64, f64)>,
    total_length: f64,
    /// Coarse positions every COARSE_GRID of arc length, for nearest-point scans.
    coarse: Vec<(f64, Vec2)>,
}

impl Path {
    /// Fits the spline and builds the arc-length tables.
    pub fn fit(waypoints: &[Vec2]) -> Result<Path> {
        if waypoints.len() < 2 {
            return Err(Error::Config("a path needs at least two waypoints".into()));
        }
        let mut ts = Vec::with_capacity(waypoints.len());
        let mut chord = 0.0;
        ts.push(0.0);
        for w in waypoints.windows(2) {
            let d = w[0].distance(w[1]);
            if d == 0.0 {
                return Err(Error::Config("duplicate consecutive waypoints".into()));
            }
            chord += d;
            ts.push(chord);
        }
        let xs: Vec<f64> = waypoints.iter().map(|p| p.x).collect();
        let ys: Vec<f64> = waypoints.iter().map(|p| p.y).collect();
        let spline_x = CubicSpline::natural(ts.clone(), xs);
        let spline_y = CubicSpline::natural(ts, ys);

        // numeric arc length at ~1 cm resolution in the chord parameter
        let samples = ((chord / ARC_RESOLUTION).ceil() as usize).max(2);
        let mut arc_table = Vec::with_capacity(samples + 1);
        let mut prev = Vec2::new(spline_x.eval(0.0), spline_y.eval(0.0));
        let mut arc = 0.0;
        arc_table.push((0.0, 0.0));
        for k in 1..=samples {
            let t = chord * k as f64 / samples as f64;
            let p = Vec2::new(spline_x.eval(t), spline_y.eval(t));
            arc += prev.distance(p);
            arc_table.push((arc, t));
            prev = p;
        }
        let total_length = arc;

        let mut path = Path {
            waypoints: waypoints.to_vec(),
            spline_x,
            spline_y,
            arc_table,
            total_length,
            coarse: Vec::new(),
        };
        let n_coarse = ((total_length / COARSE_GRID).ceil() as usize).max(1);
        path.coarse = (0..=n_coarse)
            .map(|k| {
                let s = total_length * k as f64 / n_coarse as f64;
                (s, path.point_at(s))
            })
            .collect();
        Ok(path)
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    /// Chord parameter for a given arc length (clamped to the path).
    fn param_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.total_length);
        let idx = match self
            .arc_table
            .binary_search_by(|(a, _)| a.partial_cmp(&s).unwrap())
        {
            Ok(i) => return self.arc_table[i].1,
            Err(i) => i,
        };
        if idx == 0 {
            return self.arc_table[0].1;
        }
        if idx >= self.arc_table.len() {
            return self.arc_table[self.arc_table.len() - 1].1;
        }
        let (s0, t0) = self.arc_table[idx - 1];
        let (s1, t1) = self.arc_table[idx];
        let alpha = if s1 > s0 { (s - s0) / (s1 - s0) } else { 0.0 };
        t0 + alpha * (t1 - t0)
    }

    /// Point on the path at arc length `s`.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let t = self.param_at(s);
        Vec2::new(self.spline_x.eval(t), self.spline_y.eval(t))
    }

    /// Unit tangent at arc length `s`.
    pub fn tangent_at(&self, s: f64) -> Vec2 {
        let t = self.param_at(s);
        Vec2::new(self.spline_x.deriv(t), self.spline_y.deriv(t)).unit_or_zero(1e-12)
    }

    /// Arc length of the nearest point to `position`.
    ///
    /// A coarse scan over the 0.1 m grid brackets the minimum, then a ternary
    /// search refines it. With `hint` (a previous arc length) only a local
    /// window is scanned, which is what the tracking controller uses.
    pub fn nearest(&self, position: Vec2, hint: Option<f64>) -> f64 {
        let (lo_idx, hi_idx) = match hint {
            Some(s) => {
                let per = COARSE_GRID;
                let center = (s / per).round() as isize;
                let span = (2.0 / per).ceil() as isize; // +/- 2 m window
                (
                    (center - span).max(0) as usize,
                    ((center + span) as usize).min(self.coarse.len() - 1),
                )
            }
            None => (0, self.coarse.len() - 1),
        };
        let mut best_idx = lo_idx;
        let mut best_d2 = f64::INFINITY;
        for (k, &(_, p)) in self.coarse[lo_idx..=hi_idx].iter().enumerate() {
            let d2 = (p - position).norm_squared();
            if d2 < best_d2 {
                best_d2 = d2;
                best_idx = lo_idx + k;
            }
        }
        let lo = if best_idx == 0 { 0.0 } else { self.coarse[best_idx - 1].0 };
        let hi = if best_idx + 1 >= self.coarse.len() {
            self.total_length
        } else {
            self.coarse[best_idx + 1].0
        };
        self.refine_nearest(position, lo, hi)
    }

    fn refine_nearest(&self, position: Vec2, mut lo: f64, mut hi: f64) -> f64 {
        let d2 = |s: f64| (self.point_at(s) - position).norm_squared();
        for _ in 0..60 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if d2(m1) <= d2(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        0.5 * (lo + hi)
    }

    /// Signed lateral deviation of `position` from the path: positive to the
    /// left of the local tangent.
    pub fn cross_track_error(&self, position: Vec2, hint: Option<f64>) -> (f64, f64) {
        let s = self.nearest(position, hint);
        let nearest = self.point_at(s);
        let tangent = self.tangent_at(s);
        let offset = position - nearest;
        let sign = if tangent.cross(offset) >= 0.0 { 1.0 } else { -1.0 };
        (sign * offset.norm(), s)
    }
}

/// Free-function form of the signed lateral deviation query.
pub fn cross_track_error(path: &Path, position: Vec2) -> f64 {
    path.cross_track_error(position, None).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn two_waypoints_straight_segment() {
        let path = Path::fit(&[Vec2::ZERO, Vec2::new(3.0, 4.0)]).unwrap();
        assert!((path.total_length() - 5.0).abs() < 1e-6);
        let mid = path.point_at(2.5);
        assert!((mid.x - 1.5).abs() < 1e-6);
        assert!((mid.y - 2.0).abs() < 1e-6);
    }

    #[test]
    fn spline_interpolates_waypoints() {
        let wps = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(5.0, 1.0),
            Vec2::new(10.0, -1.0),
            Vec2::new(15.0, 0.5),
            Vec2::new(20.0, 0.0),
        ];
        let path = Path::fit(&wps).unwrap();
        for w in &wps {
            let s = path.nearest(*w, None);
            let p = path.point_at(s);
            assert!(p.distance(*w) < 1e-6, "waypoint {w:?} missed by {}", p.distance(*w));
        }
    }

    #[test]
    fn semicircle_arc_length() {
        // radius 10, a waypoint every 10 degrees over a half turn
        let wps: Vec<Vec2> = (0..=18)
            .map(|k| {
                let a = PI * k as f64 / 18.0;
                Vec2::new(10.0 * a.cos(), 10.0 * a.sin())
            })
            .collect();
        let path = Path::fit(&wps).unwrap();
        let expected = PI * 10.0;
        assert!(
            (path.total_length() - expected).abs() / expected < 0.005,
            "length {} vs {expected}",
            path.total_length()
        );
    }

    #[test]
    fn arc_length_parameterization_monotone_and_uniform() {
        let wps = vec![Vec2::ZERO, Vec2::new(4.0, 2.0), Vec2::new(8.0, -1.0), Vec2::new(12.0, 0.0)];
        let path = Path::fit(&wps).unwrap();
        let mut prev = path.point_at(0.0);
        for k in 1..=100 {
            let s = path.total_length() * k as f64 / 100.0;
            let p = path.point_at(s);
            let ds = prev.distance(p);
            let expected = path.total_length() / 100.0;
            assert!((ds - expected).abs() < 0.01 * expected + 1e-4, "uneven step {ds} vs {expected}");
            prev = p;
        }
    }

    #[test]
    fn cte_on_path_is_zero() {
        let wps = vec![Vec2::ZERO, Vec2::new(5.0, 2.0), Vec2::new(10.0, 0.0)];
        let path = Path::fit(&wps).unwrap();
        let p = path.point_at(4.2);
        assert!(cross_track_error(&path, p).abs() < 1e-3);
    }

    #[test]
    fn cte_sign_left_positive() {
        let path = Path::fit(&[Vec2::ZERO, Vec2::new(10.0, 0.0)]).unwrap();
        let e = cross_track_error(&path, Vec2::new(5.0, 0.3));
        assert!((e - 0.3).abs() < 1e-6);
        let e = cross_track_error(&path, Vec2::new(5.0, -0.4));
        assert!((e + 0.4).abs() < 1e-6);
    }

    #[test]
    fn cte_against_analytic_circle() {
        let wps: Vec<Vec2> = (0..=18)
            .map(|k| {
                let a = PI * k as f64 / 18.0;
                Vec2::new(10.0 * a.cos(), 10.0 * a.sin())
            })
            .collect();
        let path = Path::fit(&wps).unwrap();
        // a point 2 m outside the circle, mid-arc
        let probe = Vec2::new(12.0 * (PI / 3.0).cos(), 12.0 * (PI / 3.0).sin());
        let e = cross_track_error(&path, probe);
        assert!((e.abs() - 2.0).abs() < 1e-2, "cte {e}");
    }

    #[test]
    fn nearest_with_hint_matches_global() {
        let wps = vec![Vec2::ZERO, Vec2::new(6.0, 3.0), Vec2::new(12.0, 0.0), Vec2::new(18.0, 2.0)];
        let path = Path::fit(&wps).unwrap();
        for k in 0..40 {
            let s = path.total_length() * k as f64 / 40.0;
            let probe = path.point_at(s) + Vec2::new(0.2, -0.3);
            let global = path.nearest(probe, None);
            let hinted = path.nearest(probe, Some(s));
            assert!((global - hinted).abs() < 1e-3, "s={s}: {global} vs {hinted}");
        }
    }

    #[test]
    fn degenerate_waypoints_rejected() {
        assert!(Path::fit(&[Vec2::ZERO]).is_err());
        assert!(Path::fit(&[Vec2::ZERO, Vec2::ZERO]).is_err());
        assert!(Path::fit(&[Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(1.0, 0.0)]).is_err());
    }
}
