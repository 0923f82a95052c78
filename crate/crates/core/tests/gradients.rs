mod support;

#[test]
fn mse_gradients_match_finite_differences() {
    let (mse, _) = support::gradient_errors();
    assert!(mse < 1e-4, "max relative error {mse}");
}

#[test]
fn charting_gradients_match_finite_differences() {
    let (_, cc) = support::gradient_errors();
    assert!(cc < 1e-4, "max relative error {cc}");
}

#[test]
fn batch_norm_parameters_are_part_of_the_check() {
    let (model, _) = support::problem();
    let lin: usize = model.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum();
    // two hidden layers of widths 8 and 4 carry γ and β
    assert_eq!(model.num_params(), lin + 2 * (8 + 4) + 1);
}
