//! Central finite-difference check of every differentiable operator.

use subqe::nn::gradcheck::{check_all, STEP};

fn main() {
    let cases = std::env::args().nth(1).and_then(|c| c.parse().ok()).unwrap_or(20);
    println!("h = {STEP:e}, {cases} random shapes per operator");
    for r in check_all(cases, 2024) {
        println!("{:>18}  max relative error {:.2e}", r.op, r.max_rel_err);
    }
}
