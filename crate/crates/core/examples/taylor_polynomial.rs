//! The even-order Taylor polynomial of exp: values, derivatives, the safe
//! input range and the certified lower bound of its minimum.
//!
//! ```text
//! cargo run --example taylor_polynomial
//! ```

use taylor_softmax::taylor_poly::{eval_poly, partial_exp_sum, poly_min_bound, safe_input_range};
use taylor_softmax::TaylorOrder;

fn main() -> taylor_softmax::Result<()> {
    println!("f2(-1) = {}  (the minimum of 1 + z + z^2/2)", eval_poly(-1.0, TaylorOrder::new(2)?)?.value);
    println!("odd order 3 -> {}", TaylorOrder::new(3).unwrap_err());
    println!();
    println!("{:>3} {:>12} {:>12} {:>12} {:>22}", "n", "f(-3)", "f'(-3)", "min bound", "safe range");
    for n in TaylorOrder::all().take(8) {
        let v = eval_poly(-3.0, n)?;
        let (lo, hi) = safe_input_range(n);
        println!(
            "{:>3} {:>12.6} {:>12.6} {:>12.3e} {:>22}",
            n.get(),
            v.value,
            v.derivative,
            poly_min_bound(n),
            format!("[{lo:.3e}, {hi:.3e}]")
        );
    }
    println!();
    // Convergence to exp at a fixed point.
    for degree in [2, 4, 8, 16, 30] {
        let approx = partial_exp_sum(2.0, degree);
        println!("degree {degree:>2}: {approx:.12}  |error| {:.2e}", (approx - 2f64.exp()).abs());
    }
    Ok(())
}
