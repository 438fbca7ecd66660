use seqprop::mathkern::CiFamily;
use seqprop::rules::{wald_equivalent_zeta, DesignParams, RuleFamily, StoppingRule};

fn rule(eps: f64, delta: f64, rho: f64, zeta: f64, family: RuleFamily) -> StoppingRule {
    let p = DesignParams::double_parabolic(eps, delta, rho, zeta, 1).unwrap().with_family(family);
    StoppingRule::new(&p).unwrap()
}

fn mismatches(a: &StoppingRule, b: &StoppingRule, n_max: u64) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    for n in 1..=n_max {
        for k in 0..=n {
            if a.stops(k, n) != b.stops(k, n) {
                out.push((k, n));
            }
        }
    }
    out
}

/// `(eps, zeta)` with `delta = 0.05`, covering `zeta delta` in {0.025, 0.1}.
const SETTINGS: [(f64, f64); 4] = [(0.05, 0.5), (0.05, 2.0), (0.1, 0.5), (0.1, 2.0)];

#[test]
fn wilson_inclusion_matches_closed_form() {
    for (eps, zeta) in SETTINGS {
        let inclusion = rule(eps, 0.05, 0.75, zeta, RuleFamily::Inclusion { ci: CiFamily::Wilson });
        let closed = rule(eps, 0.05, 0.75, zeta, RuleFamily::Wilson);
        let bad = mismatches(&inclusion, &closed, 300);
        assert!(bad.is_empty(), "eps {eps} zeta {zeta}: {bad:?}");
    }
}

#[test]
fn clopper_pearson_inclusion_matches_two_tail_rule() {
    for (eps, zeta) in SETTINGS {
        let inclusion = rule(eps, 0.05, 0.75, zeta, RuleFamily::Inclusion { ci: CiFamily::ClopperPearson });
        let direct = rule(eps, 0.05, 0.75, zeta, RuleFamily::ClopperPearson);
        let bad = mismatches(&inclusion, &direct, 200);
        assert!(bad.is_empty(), "eps {eps} zeta {zeta}: {bad:?}");
    }
}

#[test]
fn wald_inclusion_matches_double_parabolic_at_zero_dilation() {
    for (eps, zeta) in SETTINGS {
        let inclusion = rule(eps, 0.05, 0.75, zeta, RuleFamily::Inclusion { ci: CiFamily::Wald });
        let z2 = wald_equivalent_zeta(zeta, 0.05).unwrap();
        let dp = rule(eps, 0.05, 0.0, z2, RuleFamily::DoubleParabolic);
        let bad = mismatches(&inclusion, &dp, 300);
        assert!(bad.is_empty(), "eps {eps} zeta {zeta}: {bad:?}");
        let wald = rule(eps, 0.05, 0.75, z2, RuleFamily::Wald { min_size_override: false });
        assert!(mismatches(&wald, &dp, 300).is_empty());
    }
}

#[test]
fn massart_is_double_parabolic_two_thirds() {
    for (eps, zeta) in SETTINGS {
        let b = rule(eps, 0.05, 0.75, zeta, RuleFamily::Massart);
        let dp = rule(eps, 0.05, 2.0 / 3.0, zeta, RuleFamily::DoubleParabolic);
        assert!(mismatches(&b, &dp, 300).is_empty());
    }
}

#[test]
fn wilson_is_double_parabolic_one() {
    for (eps, zeta) in SETTINGS {
        let w = rule(eps, 0.05, 0.75, zeta, RuleFamily::Wilson);
        let z2 = wald_equivalent_zeta(zeta, 0.05).unwrap();
        let dp = rule(eps, 0.05, 1.0, z2, RuleFamily::DoubleParabolic);
        let bad = mismatches(&w, &dp, 300);
        assert!(bad.is_empty(), "eps {eps} zeta {zeta}: {bad:?}");
    }
}

#[test]
fn symmetric_families_decide_symmetrically() {
    let families = [
        RuleFamily::Fishman,
        RuleFamily::Massart,
        RuleFamily::ClopperPearson,
        RuleFamily::Wald { min_size_override: false },
        RuleFamily::DoubleParabolic,
        RuleFamily::Wilson,
    ];
    for family in families {
        let r = rule(0.1, 0.05, 0.75, 1.0, family);
        for n in 1..=150u64 {
            for k in 0..=n {
                assert_eq!(r.stops(k, n), r.stops(n - k, n), "{family:?} k {k} n {n}");
            }
        }
    }
}

#[test]
fn double_parabolic_termination_is_monotone() {
    for rho in [0.0, 0.5, 0.75, 1.0] {
        let r = rule(0.05, 0.05, rho, 2.6759, RuleFamily::DoubleParabolic);
        for n in 1..=200u64 {
            for k in 0..=n {
                if !r.stops(k, n) {
                    continue;
                }
                for m in 2..=4u64 {
                    assert!(r.stops(k * m, n * m), "rho {rho} k {k} n {n} m {m}");
                }
            }
        }
    }
}
