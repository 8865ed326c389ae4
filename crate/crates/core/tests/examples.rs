//! Every example runs to completion.

macro_rules! example {
    ($name:ident, $file:literal) => {
        #[allow(dead_code)]
        mod $name {
            include!(concat!("../examples/", $file));
            #[test]
            fn runs() {
                run_example().unwrap();
            }
        }
    };
}

example!(bootstrap_moments, "bootstrap_moments.rs");
example!(cone_test, "cone_test.rs");
example!(covariate_shift, "covariate_shift.rs");
example!(estimate_from_csv, "estimate_from_csv.rs");
example!(groupwise_weights, "groupwise_weights.rs");
example!(inference, "inference.rs");
example!(monte_carlo, "monte_carlo.rs");
example!(response_functions, "response_functions.rs");
example!(robust_inference, "robust_inference.rs");
example!(simplex_weights, "simplex_weights.rs");
example!(threshold_policy, "threshold_policy.rs");
