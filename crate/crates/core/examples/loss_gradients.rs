//! Values and analytic gradients of the six fine-tuning objectives, checked
//! against central differences.
//!
//! Usage: `cargo run --example loss_gradients`

use termpo::losses::{finite_difference_residuals, loss_term, LossConfig, SequenceScore};

fn main() {
    // the term is the second token of each output
    let w = SequenceScore::new(vec![-0.3, -2.2, -0.4, -0.1]).with_mask([1]);
    let l = SequenceScore::new(vec![-0.2, -0.9, -0.5, -0.1]).with_mask([1]);
    for id in 1..=6 {
        let config = LossConfig::setting(id).expect("known setting");
        let value = loss_term(&w, &l, &config).expect("valid inputs");
        let (rw, rl) = finite_difference_residuals(&w, &l, &config, 1e-6).expect("valid inputs");
        let worst = rw.iter().chain(&rl).copied().fold(0.0, f64::max);
        let fmt = |g: &[f64]| g.iter().map(|x| format!("{x:+.3}")).collect::<Vec<_>>().join(" ");
        println!("setting {id}: loss {:.4}, max FD residual {worst:.1e}", value.value);
        println!("  dL/dw [{}]", fmt(&value.grad_w));
        println!("  dL/dl [{}]", fmt(&value.grad_l));
    }
}
