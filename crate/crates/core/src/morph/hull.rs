//! Convex hull and caliper widths over integer points.

pub type Point = (i64, i64);

fn cross(o: Point, a: Point, b: Point) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Monotone-chain hull, counter-clockwise in a y-up frame, no collinear vertices.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let twice: i64 = (0..n).map(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        a.0 * b.1 - b.0 * a.1
    }).sum();
    twice.abs() as f64 / 2.0
}

/// Longest chord between hull vertices, as `(length, a, b)`.
pub fn max_caliper(hull: &[Point]) -> (f64, Point, Point) {
    let mut best = (0i64, hull[0], hull[0]);
    for (i, &a) in hull.iter().enumerate() {
        for &b in &hull[i + 1..] {
            let d2 = (a.0 - b.0).pow(2) + (a.1 - b.1).pow(2);
            if d2 > best.0 {
                best = (d2, a, b);
            }
        }
    }
    ((best.0 as f64).sqrt(), best.1, best.2)
}

/// Minimum width: for each hull edge, the farthest vertex from its line; the
/// smallest such distance over edges.
pub fn min_caliper(hull: &[Point]) -> f64 {
    let n = hull.len();
    if n < 3 {
        return 0.0;
    }
    (0..n)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            let len = (((b.0 - a.0).pow(2) + (b.1 - a.1).pow(2)) as f64).sqrt();
            hull.iter().map(|&p| cross(a, b, p).abs()).max().unwrap_or(0) as f64 / len
        })
        .fold(f64::INFINITY, f64::min)
}
