//! Box arithmetic used by matching, refinement and evaluation.
//!
//! Center/size quantities are derived from corner form on every call.
//! [`relative_distance`], [`size_cost`] and [`fitness`] are asymmetric: the
//! annotated box comes first and the proposal second, and the proposal's
//! half-perimeter `W_p + H_p` is the normaliser.

use crate::types::BoundingBox;

/// Default weight of the size term in [`fitness`].
pub const DEFAULT_GAMMA: f64 = 0.1;

pub fn intersection_area(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = a.x2().min(b.x2()) - a.x1().max(b.x1());
    let h = a.y2().min(b.y2()) - a.y1().max(b.y1());
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Center distance normalised by the proposal's half-perimeter.
pub fn relative_distance(annotated: &BoundingBox, proposal: &BoundingBox) -> f64 {
    let (bx, by) = annotated.center();
    let (px, py) = proposal.center();
    (bx - px).hypot(by - py) / proposal.half_perimeter()
}

/// `|(W_b + H_b) / (W_p + H_p) - 1|`.
pub fn size_cost(annotated: &BoundingBox, proposal: &BoundingBox) -> f64 {
    (annotated.half_perimeter() / proposal.half_perimeter() - 1.0).abs()
}

/// `1 - (D + γ C)`. Equals 1 for identical boxes and goes negative for
/// far-apart ones.
pub fn fitness(annotated: &BoundingBox, proposal: &BoundingBox, gamma: f64) -> f64 {
    1.0 - (relative_distance(annotated, proposal) + gamma * size_cost(annotated, proposal))
}

/// Coordinate-wise `α p + (1 - α) b`.
pub fn blend(b: &BoundingBox, p: &BoundingBox, alpha: f64) -> BoundingBox {
    debug_assert!((0.0..=1.0).contains(&alpha));
    if alpha == 0.0 {
        return *b;
    }
    if alpha == 1.0 {
        return *p;
    }
    let mix = |u: f64, v: f64| alpha * v + (1.0 - alpha) * u;
    BoundingBox::from_corners_unchecked(
        mix(b.x1(), p.x1()),
        mix(b.y1(), p.y1()),
        mix(b.x2(), p.x2()),
        mix(b.y2(), p.y2()),
    )
}

/// Coordinate-wise mean of two boxes.
pub fn average2(a: &BoundingBox, b: &BoundingBox) -> BoundingBox {
    let m = |u: f64, v: f64| (u + v) / 2.0;
    BoundingBox::from_corners_unchecked(
        m(a.x1(), b.x1()),
        m(a.y1(), b.y1()),
        m(a.x2(), b.x2()),
        m(a.y2(), b.y2()),
    )
}

/// Coordinate-wise mean of three boxes. Each coordinate is summed in sorted
/// order so the result does not depend on argument order.
pub fn average3(a: &BoundingBox, b: &BoundingBox, c: &BoundingBox) -> BoundingBox {
    let m = |u: f64, v: f64, w: f64| {
        let mut xs = [u, v, w];
        xs.sort_by(f64::total_cmp);
        (xs[0] + xs[1] + xs[2]) / 3.0
    };
    let x1 = m(a.x1(), b.x1(), c.x1());
    let y1 = m(a.y1(), b.y1(), c.y1());
    let x2 = m(a.x2(), b.x2(), c.x2());
    let y2 = m(a.y2(), b.y2(), c.y2());
    // The sum of three equal values can round below the value; pin the mean
    // back into the inputs' range.
    let clampc = |v: f64, lo: f64, hi: f64| v.clamp(lo, hi);
    BoundingBox::from_corners_unchecked(
        clampc(
            x1,
            a.x1().min(b.x1()).min(c.x1()),
            a.x1().max(b.x1()).max(c.x1()),
        ),
        clampc(
            y1,
            a.y1().min(b.y1()).min(c.y1()),
            a.y1().max(b.y1()).max(c.y1()),
        ),
        clampc(
            x2,
            a.x2().min(b.x2()).min(c.x2()),
            a.x2().max(b.x2()).max(c.x2()),
        ),
        clampc(
            y2,
            a.y2().min(b.y2()).min(c.y2()),
            a.y2().max(b.y2()).max(c.y2()),
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(10.0, 10.0, 20.0, 20.0)), 0.0);
        assert_eq!(iou(&a, &bx(10.0, 0.0, 20.0, 10.0)), 0.0);
        let third = iou(&a, &bx(5.0, 0.0, 15.0, 10.0));
        assert!((third - 50.0 / 150.0).abs() < 1e-15);
    }

    #[test]
    fn relative_distance_examples() {
        let p = bx(10.0, 0.0, 110.0, 100.0);
        let b = bx(0.0, 0.0, 100.0, 100.0);
        assert_eq!(relative_distance(&p, &p), 0.0);
        assert!((relative_distance(&b, &p) - 0.05).abs() < 1e-15);
        let (b3, p3) = (
            b.scale_about(0.0, 0.0, 3.0).unwrap(),
            p.scale_about(0.0, 0.0, 3.0).unwrap(),
        );
        assert!((relative_distance(&b3, &p3) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn size_cost_examples() {
        let p = bx(0.0, 0.0, 100.0, 100.0);
        assert_eq!(size_cost(&bx(50.0, 50.0, 150.0, 150.0), &p), 0.0);
        assert_eq!(size_cost(&bx(0.0, 0.0, 150.0, 150.0), &p), 0.5);
        let small = bx(0.0, 0.0, 50.0, 50.0);
        assert_eq!(size_cost(&small, &p), 0.5);
        assert_eq!(size_cost(&p, &small), 1.0);
    }

    #[test]
    fn fitness_examples() {
        let b = bx(0.0, 0.0, 100.0, 100.0);
        assert_eq!(fitness(&b, &b, DEFAULT_GAMMA), 1.0);
        let p = bx(10.0, 0.0, 110.0, 100.0);
        assert!((fitness(&b, &p, DEFAULT_GAMMA) - 0.95).abs() < 1e-15);
        let far = bx(500.0, 500.0, 600.0, 600.0);
        assert!(fitness(&b, &far, DEFAULT_GAMMA) < 0.0);
    }

    #[test]
    fn blend_examples() {
        let b = bx(0.0, 0.0, 100.0, 100.0);
        let p = bx(10.0, 10.0, 110.0, 110.0);
        assert_eq!(blend(&b, &p, 0.0), b);
        assert_eq!(blend(&b, &p, 1.0), p);
        let m = blend(&b, &p, 0.2).corners();
        let expect = [2.0, 2.0, 102.0, 102.0];
        for (a, e) in m.iter().zip(expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn average_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(3.0, 0.0, 10.0, 10.0);
        let c = bx(0.0, 3.0, 10.0, 13.0);
        assert_eq!(average3(&a, &b, &c).corners(), [1.0, 1.0, 10.0, 11.0]);
        assert_eq!(average3(&a, &a, &a), a);
        assert_eq!(average3(&c, &a, &b), average3(&a, &b, &c));
        assert_eq!(average3(&b, &c, &a), average3(&a, &b, &c));
        assert_eq!(average2(&a, &b).corners(), [1.5, 0.0, 10.0, 10.0]);
    }
}
