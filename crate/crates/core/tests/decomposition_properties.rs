use cvkerr_core::decomposition::verify::{log_residual, scaling_interior};
use cvkerr_core::decomposition::{
    compile_sequence, q2_family, CompositionScheme, FockCompiler, GateSequence, Q2Variant, SchemeKind,
};
use cvkerr_core::fock::FockOperator;
use proptest::prelude::*;

fn scheme_kind() -> impl Strategy<Value = SchemeKind> {
    prop_oneof![
        Just(SchemeKind::FirstOrder),
        Just(SchemeKind::Separated),
        Just(SchemeKind::Q2),
        Just(SchemeKind::Q2Inverse),
        Just(SchemeKind::Q2Reversed),
        Just(SchemeKind::Q2InvReversed),
        Just(SchemeKind::ThirdOrder),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sequences_are_deterministic(kind in scheme_kind(), t in 1e-4f64..1e-1, reps in 1usize..4) {
        let a = CompositionScheme::new(kind, t, reps).unwrap();
        let b = CompositionScheme::new(kind, t, reps).unwrap();
        let (sa, sb) = (a.sequence().unwrap(), b.sequence().unwrap());
        prop_assert_eq!(&sa, &sb);
        prop_assert_eq!(sa.to_json(Some(&a)).unwrap(), sb.to_json(Some(&b)).unwrap());
    }

    #[test]
    fn sequence_json_round_trips(kind in scheme_kind(), t in 1e-4f64..1e-1, reps in 1usize..3) {
        let scheme = CompositionScheme::new(kind, t, reps).unwrap();
        let seq = scheme.sequence().unwrap();
        let text = seq.to_json(Some(&scheme)).unwrap();
        let (back, back_scheme) = GateSequence::from_json(&text).unwrap();
        prop_assert_eq!(back, seq);
        prop_assert_eq!(back_scheme, Some(scheme));
    }

    #[test]
    fn q2_then_inverse_is_identity(t in 1e-4f64..1e-2, reversed in any::<bool>()) {
        let dim = 30;
        let (fwd, inv) = if reversed {
            (Q2Variant::Reversed, Q2Variant::InvReversed)
        } else {
            (Q2Variant::Q2, Q2Variant::Inverse)
        };
        let compiler = FockCompiler::new(dim).unwrap();
        let seq = q2_family(t, fwd).unwrap().then(&q2_family(t, inv).unwrap());
        let r = log_residual(&compiler.compile(&seq), &FockOperator::identity(dim), scaling_interior(dim)).unwrap();
        prop_assert!(r <= 1e-9, "t {t}, residual {r}");
    }

    #[test]
    fn reversed_variant_compiles_in_opposite_order(t in 1e-4f64..1e-2) {
        let dim = 20;
        let compiler = FockCompiler::new(dim).unwrap();
        let q2 = q2_family(t, Q2Variant::Q2).unwrap();
        let reversed = compile_sequence(&q2_family(t, Q2Variant::Reversed).unwrap(), dim).unwrap();
        let manual = q2.terms().iter().fold(FockOperator::identity(dim), |u, term| &u * &compiler.term_unitary(term));
        let d = (reversed.matrix() - manual.matrix()).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        prop_assert!(d <= 1e-13, "{d}");
    }

    #[test]
    fn repetition_concatenates(kind in scheme_kind(), t in 1e-4f64..1e-2, reps in 1usize..5) {
        let one = CompositionScheme::new(kind, t, 1).unwrap().sequence().unwrap();
        let many = CompositionScheme::new(kind, t, reps).unwrap().sequence().unwrap();
        prop_assert_eq!(many.len(), reps * one.len());
    }
}
