use approx::assert_relative_eq;
use etkf_core::bounds::{
    alpha_zero, asymptotic_bound, bound_recursion_step, constant_a, finite_time_bound, lambda_star, theta,
    wellposed_bound, BoundParams, DerivedConstants, LambdaFloor,
};
use etkf_core::dynamics::{flow, FlowConfig, ModelSystem};
use etkf_core::linalg::{max_eigenvalue, min_eigenvalue, relative_gap};
use etkf_core::{
    analysis_step_covariance_form, analysis_step_transform_form, inflate, transform_matrix, DMatrix, DVector,
    Ensemble, InflationFactor, NoiseCovariance, ObservationModel, ObservationOperator,
};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn ensemble() -> impl Strategy<Value = Ensemble> {
    (1..8usize, 2..8usize).prop_flat_map(|(m, n)| matrix(m, n)).prop_map(|x| Ensemble::from_columns(x).unwrap())
}

/// Forecast ensemble with a random observation operator, SPD noise, data and inflation.
fn problem() -> impl Strategy<Value = (Ensemble, ObservationModel, DVector<f64>, f64)> {
    (1..8usize, 2..8usize)
        .prop_flat_map(|(m, n)| (Just(m), matrix(m, n), 1..=m))
        .prop_flat_map(|(m, x, d)| {
            (Just(x), matrix(d, m), matrix(d, d), proptest::collection::vec(-3.0..3.0f64, d), 1.0..2.5f64)
        })
        .prop_map(|(x, h, b, y, alpha)| {
            let d = h.nrows();
            let gamma = &b * b.transpose() / d as f64 + DMatrix::identity(d, d) * 0.3;
            let obs = ObservationModel::new(
                ObservationOperator::matrix(h).unwrap(),
                NoiseCovariance::matrix(gamma).unwrap(),
            )
            .unwrap();
            (Ensemble::from_columns(x).unwrap(), obs, DVector::from_vec(y), alpha)
        })
}

fn bound_params() -> impl Strategy<Value = BoundParams> {
    (0.01..2.0f64, 0.05..1.0f64, 0.1..3.0f64, 0.001..0.1f64, 0.01..2.0f64, 2..40usize, 1..30usize, 1e-4..1.0f64)
        .prop_map(|(beta, eps, rho, h, gamma, n, m, lambda0)| BoundParams {
            beta,
            epsilon: beta * eps,
            rho,
            h,
            gamma,
            n_members: n,
            m,
            alpha: 1.0,
            lambda0,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn deviations_center_the_ensemble(e in ensemble()) {
        let dv = e.deviations();
        let sum = dv.as_matrix().column_sum();
        prop_assert!(sum.norm() <= 1e-12 * (1.0 + e.l2_norm()) * e.size() as f64);
        let rebuilt = Ensemble::from_mean_and_deviations(&e.mean(), &dv).unwrap();
        prop_assert!(relative_gap(rebuilt.as_matrix(), e.as_matrix()) <= 1e-14);
    }

    #[test]
    fn l2_norm_splits_into_mean_and_spread(e in ensemble()) {
        let split = e.mean().norm_squared() + e.deviations().l2_norm_sq();
        assert_relative_eq!(e.l2_norm_sq(), split, max_relative = 1e-12, epsilon = 1e-14);
    }

    #[test]
    fn covariance_is_symmetric_psd(e in ensemble()) {
        let c = e.covariance();
        let m = c.matrix();
        prop_assert_eq!(m, &m.transpose());
        let scale = m.norm().max(1.0);
        prop_assert!(min_eigenvalue(m).unwrap() >= -1e-12 * scale);
    }

    #[test]
    fn inflation_scales_covariance(e in ensemble(), alpha in 1.0..4.0f64) {
        let inflated = inflate(&e, InflationFactor::new(alpha).unwrap());
        let expected = e.covariance().matrix() * (alpha * alpha);
        prop_assert!(relative_gap(inflated.covariance().matrix(), &expected) <= 1e-12);
        prop_assert!((inflated.mean() - e.mean()).norm() <= 1e-12 * (1.0 + e.mean().norm()));
    }

    #[test]
    fn transform_preserves_ones_and_contracts((e, obs, _y, alpha) in problem()) {
        let t = transform_matrix(&e.deviations(), &obs, InflationFactor::new(alpha).unwrap()).unwrap();
        let t = t.matrix();
        let ones = DVector::from_element(e.size(), 1.0);
        prop_assert!((t * &ones - &ones).norm() <= 1e-10 * ones.norm());
        prop_assert!(relative_gap(t, &t.transpose()) <= 1e-14);
        prop_assert!(min_eigenvalue(t).unwrap() > 0.0);
        prop_assert!(max_eigenvalue(t).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn forms_agree((e, obs, y, alpha) in problem()) {
        let a = InflationFactor::new(alpha).unwrap();
        let cov = analysis_step_covariance_form(&e, &y, &obs, a).unwrap().analysis;
        let tra = analysis_step_transform_form(&e, &y, &obs, a).unwrap().analysis;
        prop_assert!(relative_gap(cov.as_matrix(), tra.as_matrix()) <= 1e-9);
    }

    #[test]
    fn analysis_never_increases_covariance((e, obs, y, _alpha) in problem()) {
        let out = analysis_step_covariance_form(&e, &y, &obs, InflationFactor::NONE).unwrap();
        let diff = e.covariance().matrix() - out.analysis.covariance().matrix();
        let scale = e.covariance().matrix().norm().max(1e-300);
        prop_assert!(min_eigenvalue(&((&diff + diff.transpose()) * 0.5)).unwrap() >= -1e-10 * scale);
    }

    #[test]
    fn analysis_is_translation_equivariant((e, obs, y, alpha) in problem(), shift in -5.0..5.0f64) {
        let a = InflationFactor::new(alpha).unwrap();
        let c = DVector::from_element(e.dim(), shift);
        let moved = Ensemble::from_columns(e.offset_by(&(-&c)).unwrap().into_matrix()).unwrap();
        let y2 = &y + obs.operator.apply(&c).unwrap();
        let base = analysis_step_transform_form(&e, &y, &obs, a).unwrap().analysis;
        let out = analysis_step_transform_form(&moved, &y2, &obs, a).unwrap().analysis;
        let back = out.offset_by(&c).unwrap();
        let scale = base.as_matrix().norm() + c.norm() * (e.size() as f64).sqrt();
        prop_assert!((back.as_matrix() - base.as_matrix()).norm() <= 1e-9 * scale);
    }

    #[test]
    fn analysis_is_permutation_equivariant((e, obs, y, alpha) in problem(), seed in any::<u64>()) {
        let n = e.size();
        let mut order: Vec<usize> = (0..n).collect();
        let mut state = seed;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let perm = DMatrix::from_fn(n, n, |i, j| if order[j] == i { 1.0 } else { 0.0 });
        let permuted = e.apply_matrix(&perm).unwrap();
        let a = InflationFactor::new(alpha).unwrap();
        let base = analysis_step_transform_form(&e, &y, &obs, a).unwrap().analysis;
        let out = analysis_step_transform_form(&permuted, &y, &obs, a).unwrap().analysis;
        let expected = base.apply_matrix(&perm).unwrap();
        prop_assert!(relative_gap(out.as_matrix(), expected.as_matrix()) <= 1e-9);
    }

    #[test]
    fn whitening_inverts_coloring((_e, obs, _y, _a) in problem(), seed in proptest::collection::vec(-3.0..3.0f64, 8)) {
        let d = obs.noise.dim();
        let z = DVector::from_column_slice(&seed[..d]);
        let back = obs.noise.whiten_vector(&obs.noise.color(&z)).unwrap();
        prop_assert!((back - &z).norm() <= 1e-10 * (1.0 + z.norm()));
    }

    #[test]
    fn finite_time_bound_matches_recursion(p in bound_params(), factor in 1.01..3.0f64, e0 in 0.0..10.0f64) {
        let p = p.with_alpha(factor * alpha_zero(&p));
        let c = DerivedConstants::compute(&p).unwrap();
        let mut b = e0;
        for j in 1..60 {
            b = bound_recursion_step(b, &p, &c);
            let direct = finite_time_bound(j, e0, &p, &c);
            prop_assert!((direct - b).abs() <= 1e-9 * (b.abs() + c.d + 1.0), "j={} {} {}", j, direct, b);
        }
    }

    #[test]
    fn above_threshold_contracts(p in bound_params(), factor in 1.0001..5.0f64) {
        let p = p.with_alpha(factor * alpha_zero(&p));
        let LambdaFloor::Floor(l) = lambda_star(&p) else {
            return Err(TestCaseError::fail("no floor above the threshold"));
        };
        prop_assert!(theta(&p, l) < 1.0);
        let c = DerivedConstants::compute(&p).unwrap();
        let lim = asymptotic_bound(&p, &c).unwrap();
        let far = finite_time_bound(200_000, 1.0, &p, &c);
        prop_assert!((far - lim).abs() <= 1e-8 * (lim.abs() + c.d + 1.0));
    }

    #[test]
    fn threshold_is_needed_when_the_first_branch_binds(
        p in bound_params(),
        gamma in 0.5..2.0f64,
        lambda0 in 1e-6..1e-3f64,
        h in 0.001..0.01f64,
    ) {
        let p = BoundParams { gamma, lambda0, h, ..p };
        // at half the threshold the floor term falls below the growth term when a h <= ln 4
        let a = constant_a(&p);
        let g = (p.beta + p.epsilon) * p.h;
        let first = p.gamma * (a * p.h).exp() * g.exp_m1().sqrt() / p.lambda0.sqrt();
        let second = (0.5 * (a * p.h + g)).exp();
        prop_assume!(first > second && a * p.h <= 4f64.ln());
        let q = p.with_alpha((0.5 * alpha_zero(&p)).max(1.0));
        let th = match lambda_star(&q) {
            LambdaFloor::Floor(l) => theta(&q, l),
            LambdaFloor::NoFloor => theta(&q, 0.0),
        };
        prop_assert!(th >= 1.0 - 1e-12);
    }

    #[test]
    fn wellposed_bound_grows_with_time(p in bound_params(), e0 in 0.0..10.0f64) {
        let mut last = wellposed_bound(0, e0, &p);
        prop_assert_eq!(last, e0);
        for j in 1..50 {
            let b = wellposed_bound(j, e0, &p);
            prop_assert!(b >= last);
            last = b;
        }
    }

    #[test]
    fn flow_composes(h in 0.001..0.05f64, k in 1..5usize, x in proptest::collection::vec(-10.0..10.0f64, 3)) {
        let model = ModelSystem::lorenz63();
        let u = DVector::from_vec(x);
        let one = FlowConfig::with_substeps(h, k).unwrap();
        let two = FlowConfig::with_substeps(2.0 * h, 2 * k).unwrap();
        let stepped = flow(&model, &one, &flow(&model, &one, &u).unwrap()).unwrap();
        let direct = flow(&model, &two, &u).unwrap();
        prop_assert!((stepped - direct).norm() <= 1e-12 * (1.0 + u.norm()));
    }
}
