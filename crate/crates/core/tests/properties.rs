use proptest::prelude::*;

use skipfree::exit::{down_before_up, two_sided_up};
use skipfree::ladder::{extract_ladder, reconstruct_parent};
use skipfree::model::{phi, phi_zero, psi, tilt};
use skipfree::{ChainSpec, GeoTail};

fn chain() -> impl Strategy<Value = ChainSpec> {
    (
        prop_oneof![Just(1.0), Just(0.5), Just(0.25)],
        0.05f64..3.0,
        prop::collection::vec(0.0f64..1.5, 1..6),
        prop::option::of((0.01f64..0.5, 0.05f64..0.9)),
    )
        .prop_map(|(h, up, rates, tail)| {
            let k0 = rates.len() + 1;
            let atoms = rates.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect();
            let tail = tail.map(|(c, a)| GeoTail { k0, c, a });
            ChainSpec::new(h, up, atoms, tail).unwrap()
        })
        .prop_filter("needs a down jump", |s| s.down_mass() > 0.0)
}

fn finite_chain() -> impl Strategy<Value = ChainSpec> {
    (0.05f64..3.0, prop::collection::vec(0.0f64..1.5, 1..8)).prop_filter_map("needs a down jump", |(up, rates)| {
        if rates.iter().all(|&r| r == 0.0) {
            return None;
        }
        let atoms = rates.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect();
        Some(ChainSpec::new(1.0, up, atoms, None).unwrap())
    })
}

proptest! {
    #[test]
    fn phi_inverts_psi(s in chain(), q in 0.0f64..5.0) {
        let b = phi(&s, q);
        prop_assert!(b >= phi_zero(&s));
        prop_assert!((psi(&s, b) - q).abs() <= 1e-9 * q.max(1.0));
    }

    #[test]
    fn psi_is_convex(s in chain(), a in 0.0f64..3.0, b in 0.0f64..3.0, t in 0.0f64..1.0) {
        let mid = psi(&s, t * a + (1.0 - t) * b);
        let chord = t * psi(&s, a) + (1.0 - t) * psi(&s, b);
        prop_assert!(mid <= chord + 1e-12 * chord.abs().max(1.0));
    }

    #[test]
    fn tilts_compose(s in chain(), c1 in 0.0f64..1.0, c2 in 0.0f64..1.0) {
        let twice = tilt(&tilt(&s, c1), c2);
        let once = tilt(&s, c1 + c2);
        prop_assert!(twice.approx_eq(&once, 1e-12));
        // ψ_c(β) = ψ(β + c) - ψ(c)
        let beta = 0.7;
        let lhs = psi(&once, beta);
        let rhs = psi(&s, beta + c1 + c2) - psi(&s, c1 + c2);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
    }

    #[test]
    fn two_sided_laws_are_probabilities(s in chain(), i in 0usize..6, m in 1usize..6, q in 0.0f64..2.0) {
        let (x, y) = (i as f64 * s.h(), m as f64 * s.h());
        let up = two_sided_up(&s, q, x, y).unwrap();
        let down = down_before_up(&s, q, x, y).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&up));
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&down));
        prop_assert!(up + down <= 1.0 + 1e-12);
    }

    #[test]
    fn ladder_round_trip(s in finite_chain()) {
        let data = extract_ladder(&s).unwrap();
        let (parent, x) = reconstruct_parent(&data).unwrap();
        prop_assert!(parent.approx_eq(&s, 1e-9), "{:?} vs {:?}", parent, s);
        prop_assert!((x - (phi_zero(&s) * s.h()).exp()).abs() <= 1e-9 * x);
    }
}
