mod common;

use common::{fd_gradient_error, panel, small_surface, uniform_state};
use latmom::model::{ExactSas, EventModel, Posterior, PriorConfig};
use latmom::surface::{to_coordinates, ProbabilitySurface};
use latmom::{Membership, Moment, MomentSpec, SasParams, Variant};

fn full_spec() -> MomentSpec {
    let mut spec = MomentSpec::uniform(&["x1", "x2"], true);
    spec.mu.ar1 = true;
    spec.nu.ar1 = true;
    spec
}

fn check<E: EventModel>(post: &Posterior<'_, E>, seeds: std::ops::Range<u64>, half_width: f64) {
    for seed in seeds {
        let x = uniform_state(post.layout().dim(), half_width, seed);
        let err = fd_gradient_error(|v| post.log_posterior_and_gradient(v).unwrap(), &x, 1e-5);
        assert!(err < 1e-5, "seed {seed}: relative error {err:.3e}");
    }
}

#[test]
fn exact_posterior_gradient() {
    let p = panel(10, 5, 1);
    let post = Posterior::new(&p, &full_spec(), PriorConfig::default(), ExactSas).unwrap();
    check(&post, 0..20, 0.8);
}

#[test]
fn pseudo_posterior_gradient() {
    let s = small_surface();
    let p = panel(10, 5, 2);
    let post = Posterior::new(&p, &full_spec(), PriorConfig::default(), &s).unwrap();
    check(&post, 0..20, 0.5);
}

#[test]
fn gradient_with_multiple_membership() {
    let p = panel(6, 4, 3);
    let groups = vec!["g0".to_string(), "g1".to_string(), "g2".to_string()];
    let rows = (0..6).map(|i| vec![(i % 3, 0.7), ((i + 1) % 3, 0.3)]).collect();
    let p = p.with_membership(Membership { group_ids: groups, rows }).unwrap();
    let mut spec = full_spec();
    spec.multiple_membership = true;
    let post = Posterior::new(&p, &spec, PriorConfig::default(), ExactSas).unwrap();
    check(&post, 0..5, 0.8);
}

#[test]
fn constrained_variants_shrink_the_state() {
    let p = panel(5, 3, 4);
    let full = Posterior::new(&p, &full_spec(), PriorConfig::default(), ExactSas).unwrap();
    let no_skew = Posterior::new(&p, &full_spec().with_variant(Variant::NoSkew), PriorConfig::default(), ExactSas).unwrap();
    let no_tail = Posterior::new(&p, &full_spec().with_variant(Variant::NoTail), PriorConfig::default(), ExactSas).unwrap();
    assert!(full.layout().dim() > no_skew.layout().dim());
    assert!(no_skew.layout().dim() > no_tail.layout().dim());
    assert!(no_tail.layout().beta_range(Moment::Nu).is_empty());
    check(&no_tail, 0..3, 0.8);
}

#[test]
fn clamped_axes_have_zero_slope() {
    let s: ProbabilitySurface = small_surface();
    // tau far above the box: log tau is clamped
    let p = SasParams::new(0.3, 1.0, 0.2, 40.0).unwrap();
    let link = p.to_link_scale();
    let (_, g) = s.index_grad(&link);
    assert_eq!(g[3], 0.0);
    let step = 1e-4;
    let mut up = link;
    up[3] += step;
    assert_eq!(s.index_grad(&up).0, s.index_grad(&link).0);
    assert!(s.index_at(&to_coordinates(&p)).clamped);
}
