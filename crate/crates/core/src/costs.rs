//! State-dependent costs: quadratic tracking plus obstacle indicators, and
//! accumulation of the trajectory cost `S(τ)`.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::Rollout;
use crate::error::{Error, Result};
use crate::linalg::{check_pd, quad_form};

pub type Point2 = [f64; 2];

/// Planar convex obstacle (convex hull of its vertices) inflated by `margin`,
/// living in the two state coordinates named by `projection`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexObstacle {
    vertices: Vec<Point2>,
    hull: Vec<Point2>,
    margin: f64,
    projection: [usize; 2],
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn dist2(a: Point2, b: Point2) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn segment_dist2(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return dist2(p, a);
    }
    let s = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    dist2(p, [a[0] + s * ab[0], a[1] + s * ab[1]])
}

/// Counter-clockwise convex hull (monotone chain); collinear points dropped.
fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

impl ConvexObstacle {
    pub fn new(vertices: Vec<Point2>, margin: f64, projection: [usize; 2]) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::invalid("obstacle needs at least one vertex"));
        }
        if !(margin >= 0.0) {
            return Err(Error::invalid(format!("obstacle margin must be nonnegative, got {margin}")));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("obstacle vertices must be finite"));
        }
        let hull = convex_hull(&vertices);
        Ok(Self { vertices, hull, margin, projection })
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rectangle(x: (f64, f64), y: (f64, f64), margin: f64, projection: [usize; 2]) -> Result<Self> {
        Self::new(vec![[x.0, y.0], [x.1, y.0], [x.1, y.1], [x.0, y.1]], margin, projection)
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn projection(&self) -> [usize; 2] {
        self.projection
    }

    pub fn project(&self, x: &[f64]) -> Point2 {
        [x[self.projection[0]], x[self.projection[1]]]
    }

    /// Euclidean distance from `p` to the hull; zero inside.
    pub fn distance(&self, p: Point2) -> f64 {
        let hull = &self.hull;
        match hull.len() {
            1 => dist2(p, hull[0]).sqrt(),
            2 => segment_dist2(p, hull[0], hull[1]).sqrt(),
            k => {
                let inside = (0..k).all(|i| cross(hull[i], hull[(i + 1) % k], p) >= 0.0);
                if inside {
                    return 0.0;
                }
                (0..k)
                    .map(|i| segment_dist2(p, hull[i], hull[(i + 1) % k]))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            }
        }
    }
}

/// True iff the projected point lies within `margin` of the hull.
pub fn point_in_obstacle(x: &[f64], obs: &ConvexObstacle) -> bool {
    obs.distance(obs.project(x)) <= obs.margin
}

/// Vertex nearest to `point`; ties go to the lowest index.
pub fn closest_vertex(obs: &ConvexObstacle, point: Point2) -> Point2 {
    let mut best = obs.vertices[0];
    let mut best_d = dist2(point, best);
    for &v in &obs.vertices[1..] {
        let d = dist2(point, v);
        if d < best_d {
            best = v;
            best_d = d;
        }
    }
    best
}

/// Cost parameters: running weight `q`, terminal weight `q_terminal`,
/// target, step `dt`, temperature `lambda` and obstacle penalty `omega_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub q: DMatrix<f64>,
    pub q_terminal: DMatrix<f64>,
    pub target: DVector<f64>,
    pub dt: f64,
    pub lambda: f64,
    pub omega_c: f64,
    pub obstacles: Vec<ConvexObstacle>,
}

impl CostSpec {
    pub fn new(
        q: DMatrix<f64>,
        q_terminal: DMatrix<f64>,
        target: DVector<f64>,
        dt: f64,
        lambda: f64,
        omega_c: f64,
        obstacles: Vec<ConvexObstacle>,
    ) -> Result<Self> {
        check_pd(&q, "Q")?;
        check_pd(&q_terminal, "Q_T")?;
        let n = target.len();
        if q.nrows() != n || q_terminal.nrows() != n {
            return Err(Error::dim(format!(
                "Q is {}x{}, Q_T is {}x{}, target has {n} entries",
                q.nrows(),
                q.ncols(),
                q_terminal.nrows(),
                q_terminal.ncols()
            )));
        }
        if !(dt > 0.0) || !(lambda > 0.0) || !(omega_c >= 0.0) {
            return Err(Error::invalid(format!("need dt > 0, λ > 0, ω_C ≥ 0 (dt={dt}, λ={lambda}, ω_C={omega_c})")));
        }
        for obs in &obstacles {
            if obs.projection.iter().any(|&i| i >= n) {
                return Err(Error::dim(format!("obstacle projection {:?} outside state dimension {n}", obs.projection)));
            }
        }
        Ok(Self { q, q_terminal, target, dt, lambda, omega_c, obstacles })
    }

    pub fn state_dim(&self) -> usize {
        self.target.len()
    }

    pub fn quadratic(&self, x: &[f64]) -> f64 {
        quad_form(&self.q, x, self.target.as_slice())
    }

    pub fn obstacle_hits(&self, x: &[f64]) -> usize {
        self.obstacles.iter().filter(|o| point_in_obstacle(x, o)).count()
    }
}

pub fn running_cost(x: &[f64], spec: &CostSpec) -> f64 {
    let mut cost = spec.quadratic(x);
    if spec.omega_c > 0.0 {
        cost += spec.omega_c * spec.obstacle_hits(x) as f64;
    }
    cost
}

pub fn terminal_cost(x: &[f64], spec: &CostSpec) -> f64 {
    quad_form(&spec.q_terminal, x, spec.target.as_slice())
}

/// `S = φ(x_T) + Σ_{t<T} q(x_t) Δt`.
pub fn trajectory_cost(rollout: &Rollout, spec: &CostSpec) -> f64 {
    let horizon = rollout.horizon();
    let running: f64 = (0..horizon).map(|t| running_cost(rollout.state(t), spec)).sum();
    terminal_cost(rollout.terminal_state(), spec) + running * spec.dt
}
