mod common;

use common::*;
use proptest::prelude::*;
use slotwise_core::Action;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn update_preserves_keys(case in update_case()) {
        key_preservation(case)?;
    }

    #[test]
    fn supplementation_is_monotone(case in (slot_set(6), slot_set(6))) {
        monotone_supplement(case)?;
    }

    #[test]
    fn window_holds_last_n_steps(case in window_case()) {
        window_law(case)?;
    }

    #[test]
    fn action_round_trip(a in action()) {
        round_trip(a)?;
    }

    /// Unknown verbs and missing parentheses never parse.
    #[test]
    fn unknown_forms_rejected(verb in "[A-Z]{3,7}", body in text()) {
        prop_assume!(!["CLICK", "SLIDE", "TYPE", "BACK", "HOME", "HELP"].contains(&verb.as_str()));
        let unknown = format!("{verb}({body})");
        let bare = format!("CLICK {body}");
        prop_assert!(Action::parse(&unknown).is_err());
        prop_assert!(Action::parse(&bare).is_err());
    }
}
