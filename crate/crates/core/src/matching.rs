//! Center matching of region proposals to annotated boxes.
//!
//! Proposals are ranked by objectness; only the top [`PROPOSAL_POOL`] are
//! considered, of which those with `fitness > t_cm` against the annotated
//! box survive and the top [`MAX_CANDIDATES`] by objectness are kept. The
//! best one drives the initial correction `b* = α p* + (1 - α) b`.
//!
//! Matching is per box against a shared pool; a proposal may serve several
//! annotated boxes.

use crate::geometry::{blend, fitness, DEFAULT_GAMMA};
use crate::oracle::{DetectorResponse, Proposal};
use crate::types::{AnnotatedObject, BoundingBox};

pub const PROPOSAL_POOL: usize = 100;
pub const MAX_CANDIDATES: usize = 10;
pub const DEFAULT_T_CM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    pub t_cm: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            t_cm: DEFAULT_T_CM,
            alpha: 0.2,
            gamma: DEFAULT_GAMMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub object_id: u64,
    /// Initially corrected box; the annotated box when nothing matched.
    pub b_star: BoundingBox,
    /// At most [`MAX_CANDIDATES`], objectness descending.
    pub candidates: Vec<Proposal>,
    pub matched: bool,
}

/// Match one annotated box. `proposals` must already be sorted by
/// objectness, descending; equal objectness keeps the input order.
pub fn match_box(
    object_id: u64,
    b: &BoundingBox,
    proposals: &[Proposal],
    params: &MatchParams,
) -> MatchResult {
    debug_assert!(proposals
        .windows(2)
        .all(|w| w[0].objectness >= w[1].objectness));
    let candidates: Vec<Proposal> = proposals
        .iter()
        .take(PROPOSAL_POOL)
        .filter(|p| fitness(b, &p.bbox, params.gamma) > params.t_cm)
        .take(MAX_CANDIDATES)
        .copied()
        .collect();
    match candidates.first() {
        Some(best) => MatchResult {
            object_id,
            b_star: blend(b, &best.bbox, params.alpha),
            candidates,
            matched: true,
        },
        None => MatchResult {
            object_id,
            b_star: *b,
            candidates,
            matched: false,
        },
    }
}

pub fn match_image(
    objects: &[AnnotatedObject],
    response: &DetectorResponse,
    params: &MatchParams,
) -> Vec<MatchResult> {
    objects
        .iter()
        .map(|o| match_box(o.object_id, &o.bbox, &response.proposals, params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn prop(b: BoundingBox, objectness: f64) -> Proposal {
        Proposal {
            bbox: b,
            objectness,
        }
    }

    #[test]
    fn self_proposal_is_fixed_point() {
        let b = bx(10.0, 10.0, 60.0, 90.0);
        let props = vec![prop(b, 0.99), prop(bx(12.0, 10.0, 62.0, 90.0), 0.8)];
        for alpha in [0.0, 0.2, 0.7, 1.0] {
            let m = match_box(
                1,
                &b,
                &props,
                &MatchParams {
                    alpha,
                    ..Default::default()
                },
            );
            assert!(m.matched);
            assert_eq!(m.candidates[0].bbox, b);
            assert_eq!(m.b_star, b);
        }
    }

    #[test]
    fn distorted_box_matches_by_center() {
        // Same center and half-perimeter as the truth, very different shape.
        let truth = bx(0.0, 0.0, 100.0, 100.0);
        let noisy = bx(-45.0, 40.0, 145.0, 60.0);
        assert!(iou(&noisy, &truth) < 0.5);
        let props = vec![prop(truth, 0.95)];
        let m = match_box(1, &noisy, &props, &MatchParams::default());
        assert!(m.matched);
        let iou_matched = props.iter().any(|p| iou(&noisy, &p.bbox) > 0.5);
        assert!(!iou_matched);
    }

    #[test]
    fn pool_cutoff_applies_before_fitness() {
        let b = bx(100.0, 100.0, 200.0, 200.0);
        let mut props: Vec<Proposal> = (0..100)
            .map(|i| prop(bx(500.0, 500.0, 520.0, 520.0), 0.9 - i as f64 * 1e-4))
            .collect();
        props.extend((0..50).map(|i| prop(b, 0.5 - i as f64 * 1e-4)));
        let m = match_box(1, &b, &props, &MatchParams::default());
        assert!(!m.matched);
        assert_eq!(m.b_star, b);
        assert!(m.candidates.is_empty());
    }

    #[test]
    fn candidates_capped_and_sorted() {
        let b = bx(0.0, 0.0, 100.0, 100.0);
        let props: Vec<Proposal> = (0..30)
            .map(|i| {
                prop(
                    bx(i as f64 * 0.1, 0.0, 100.0 + i as f64 * 0.1, 100.0),
                    1.0 - i as f64 * 0.01,
                )
            })
            .collect();
        let m = match_box(1, &b, &props, &MatchParams::default());
        assert_eq!(m.candidates.len(), MAX_CANDIDATES);
        assert_eq!(m.candidates[..], props[..MAX_CANDIDATES]);
    }

    #[test]
    fn equal_objectness_keeps_input_order() {
        let b = bx(0.0, 0.0, 100.0, 100.0);
        let first = bx(1.0, 0.0, 101.0, 100.0);
        let second = bx(0.0, 1.0, 100.0, 101.0);
        let m = match_box(
            1,
            &b,
            &[prop(first, 0.9), prop(second, 0.9)],
            &MatchParams::default(),
        );
        assert_eq!(m.candidates[0].bbox, first);
    }

    #[test]
    fn empty_pool_is_unmatched() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let m = match_box(5, &b, &[], &MatchParams::default());
        assert!(!m.matched);
        assert_eq!(m.b_star, b);
    }
}
