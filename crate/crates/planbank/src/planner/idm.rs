//! Intelligent-driver-model longitudinal law. `idm_accel` is the raw model:
//! it is not clamped below, and the interaction term is always present (an
//! absent lead is an infinite gap). Engagement logic and physical clamps live
//! in the candidate rollouts.

use super::PlannerParams;

/// Free-flow speed exponent.
pub const SPEED_EXPONENT: f64 = 4.0;
/// Desired time headway (s).
pub const TIME_HEADWAY: f64 = 1.5;

/// Desired gap `s*(v, dv) = s0 + max(0, v T + v dv / (2 sqrt(a_m b)))`.
/// `dv` is the closing speed (ego minus lead); the dynamic term is clamped
/// at zero so opening situations fall back to the standstill gap.
pub fn desired_gap(v: f64, dv: f64, p: &PlannerParams) -> f64 {
    debug_assert!(v >= 0.0 && v.is_finite(), "speed must be finite, got {v}");
    let dynamic = v * TIME_HEADWAY + v * dv / (2.0 * (p.accel_max * p.brake_comfort).sqrt());
    p.min_gap + dynamic.max(0.0)
}

/// Raw model acceleration for gap `s` (use `f64::INFINITY` when no lead).
/// Bounded above by `a_m` but unbounded below.
pub fn idm_accel(v: f64, v0: f64, s: f64, dv: f64, p: &PlannerParams) -> f64 {
    assert!(v0 > 0.0, "free-flow speed must be positive, got {v0}");
    assert!(s > 0.0, "gap must be positive, got {s}");
    let free = (v / v0).powf(SPEED_EXPONENT);
    let interaction = {
        let want = desired_gap(v, dv, p);
        (want / s).powi(2)
    };
    p.accel_max * (1.0 - free - interaction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p(s0: f64, a_m: f64, b: f64) -> PlannerParams {
        PlannerParams {
            min_gap: s0,
            accel_max: a_m,
            brake_comfort: b,
            ..PlannerParams::default()
        }
    }

    #[test]
    fn desired_gap_at_standstill_is_min_gap() {
        let params = p(2.0, 1.5, 2.0);
        assert_eq!(desired_gap(0.0, 0.0, &params), 2.0);
        assert_eq!(desired_gap(0.0, 5.0, &params), 2.0);
    }

    #[test]
    fn desired_gap_steady_following() {
        // v = 10, dv = 0: s0 + v T = 2 + 15.
        assert_abs_diff_eq!(desired_gap(10.0, 0.0, &p(2.0, 1.5, 2.0)), 17.0);
    }

    #[test]
    fn desired_gap_clamps_when_opening_fast() {
        // v = 5, dv = -10: dynamic term is negative, clamped to zero.
        assert_abs_diff_eq!(desired_gap(5.0, -10.0, &p(2.0, 1.5, 2.0)), 2.0);
    }

    #[test]
    fn desired_gap_closing_case() {
        // v = 10, dv = 2, a_m = 1.5, b = 2.0: 17 + 20 / (2 sqrt 3).
        assert_abs_diff_eq!(
            desired_gap(10.0, 2.0, &p(2.0, 1.5, 2.0)),
            22.773502691896258,
            epsilon = 1e-9
        );
    }

    #[test]
    fn accel_closing_case() {
        // v = 10, v0 = 15, s = 20, dv = 2 with the gap above.
        let a = idm_accel(10.0, 15.0, 20.0, 2.0, &p(2.0, 1.5, 2.0));
        assert_abs_diff_eq!(a, -0.7411678895130692, epsilon = 1e-9);
    }

    #[test]
    fn accel_free_road() {
        let params = p(2.0, 1.5, 2.0);
        // At the free-flow speed with no lead the model is exactly zero.
        assert_abs_diff_eq!(idm_accel(15.0, 15.0, f64::INFINITY, 0.0, &params), 0.0);
        // From standstill with no lead it pulls at full a_m.
        assert_abs_diff_eq!(idm_accel(0.0, 15.0, f64::INFINITY, 0.0, &params), 1.5);
    }

    proptest! {
        #[test]
        fn accel_never_exceeds_max(
            v in 0.0..30.0f64,
            v0 in 0.5..30.0f64,
            s in 0.5..200.0f64,
            dv in -10.0..10.0f64,
            a_m in 0.5..3.0f64,
            b in 0.5..3.0f64,
        ) {
            let params = p(2.0, a_m, b);
            prop_assert!(idm_accel(v, v0, s, dv, &params) <= a_m + 1e-12);
        }

        #[test]
        fn accel_monotone_in_gap(
            v in 0.0..20.0f64,
            s in 1.0..100.0f64,
            extra in 0.1..50.0f64,
            dv in 0.0..8.0f64,
        ) {
            let params = p(2.0, 1.5, 2.0);
            let near = idm_accel(v, 15.0, s, dv, &params);
            let far = idm_accel(v, 15.0, s + extra, dv, &params);
            prop_assert!(far >= near, "larger gap must never brake harder");
        }

        #[test]
        fn accel_monotone_in_closing_speed(
            v in 0.1..20.0f64,
            s in 1.0..100.0f64,
            dv in 0.0..8.0f64,
            more in 0.1..5.0f64,
        ) {
            let params = p(2.0, 1.5, 2.0);
            let slow = idm_accel(v, 15.0, s, dv, &params);
            let fast = idm_accel(v, 15.0, s, dv + more, &params);
            prop_assert!(fast <= slow, "closing faster must never accelerate harder");
        }
    }
}
