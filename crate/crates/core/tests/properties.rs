use proptest::prelude::*;

use selfdebug_core::collector::normalize_code;
use selfdebug_core::eval::pass_at_k;
use selfdebug_core::gateway::{fence, parse_response};
use selfdebug_core::ppo::advantages;
use selfdebug_core::rewards::{reward_explanation, reward_refinement};

proptest! {
    #[test]
    fn pass_at_k_is_a_monotone_probability(n in 1usize..60, c_frac in 0.0f64..=1.0, k_frac in 0.0f64..=1.0) {
        let c = ((n as f64) * c_frac).floor() as usize;
        let k = 1 + (((n - 1) as f64) * k_frac).floor() as usize;
        let v = pass_at_k(n, c, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        if c < n {
            prop_assert!(pass_at_k(n, c + 1, k).unwrap() >= v - 1e-12);
        }
        if k < n {
            prop_assert!(pass_at_k(n, c, k + 1).unwrap() >= v - 1e-12);
        }
        if c == 0 {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn advantages_follow_the_recursion(delta in prop::collection::vec(-10.0f64..10.0, 1..40), gamma in 0.0f64..=1.0) {
        let a = advantages(&delta, gamma);
        prop_assert_eq!(a.len(), delta.len());
        let t = delta.len() - 1;
        prop_assert_eq!(a[t], delta[t]);
        for i in 0..t {
            prop_assert!((a[i] - (delta[i] + gamma * a[i + 1])).abs() <= 1e-9 * (1.0 + a[i].abs()));
        }
    }

    #[test]
    fn rewards_are_monotone_and_bounded(a in 0.0f64..=1.0, b in 0.0f64..=1.0, s in -1.0f64..=1.0, d in 0.0f64..0.5) {
        let r = reward_refinement(a, b).unwrap();
        prop_assert!((-5.0..=5.0).contains(&r));
        prop_assert!(reward_refinement((a + d).min(1.0), b).unwrap() >= r);
        let e = reward_explanation(s).unwrap();
        prop_assert!((-5.0..=5.0).contains(&e));
        prop_assert!(reward_explanation((s + d).min(1.0)).unwrap() >= e);
    }

    #[test]
    fn normalization_is_idempotent(code in "[a-z #'\"=\n\t()]{0,60}") {
        let once = normalize_code(&code);
        prop_assert_eq!(normalize_code(&once), once);
    }

    #[test]
    fn fenced_code_parses_back(expl in "[A-Za-z ,.]{0,40}", body in "[a-z_]{1,8} = [0-9]{1,4}") {
        let raw = format!("{expl}\n\n{}", fence(&body));
        let parsed = parse_response(&raw).unwrap();
        prop_assert_eq!(parsed.code, body);
        prop_assert_eq!(parsed.explanation.unwrap_or_default(), expl.trim());
    }
}
