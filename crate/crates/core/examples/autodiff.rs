//! Builds a small conv → instance norm → relu → tanh graph on the tape,
//! backpropagates, and checks the gradients against central differences.

use ictd::tensor::{grad_check, Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = Tensor::<f64>::from_fn([1, 2, 5, 5], |i| ((i * 37) % 11) as f64 / 11.0 - 0.5);
    let w = Tensor::<f64>::from_fn([3, 2, 3, 3], |i| ((i * 13) % 7) as f64 / 7.0 - 0.4);

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone())?;
    let wv = tape.param(w.clone())?;
    let h = tape.conv2d(xv, wv, None, 1, 1)?;
    let gamma = tape.param(Tensor::from_fn([3], |_| 1.0))?;
    let beta = tape.param(Tensor::from_fn([3], |_| 0.0))?;
    let h = tape.instance_norm(h, gamma, beta, 1e-5)?;
    let h = tape.relu(h)?;
    let h = tape.tanh(h)?;
    let loss = tape.mean(h)?;
    tape.backward(loss)?;
    println!("loss = {:.6}", tape.value(loss).data()[0]);
    println!("|dL/dw|_1 = {:.6}", tape.grad(wv).unwrap().data().iter().map(|g| g.abs()).sum::<f64>());

    let err = grad_check(
        |t, v| {
            let h = t.conv2d(v[0], v[1], None, 1, 1)?;
            let h = t.tanh(h)?;
            t.mean(h)
        },
        &[x, w],
        1e-5,
    )?;
    println!("max relative gradient error: {err:.2e}");
    Ok(())
}
