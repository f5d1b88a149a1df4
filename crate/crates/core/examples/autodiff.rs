//! Reverse-mode gradients of a small expression, checked against central
//! differences.

use sentifuse::tensor::{Axis, Tape, Tensor};

fn loss(x: &Tensor, w: &Tensor) -> sentifuse::Result<(f64, Tensor, Tensor)> {
    let mut tape = Tape::new();
    let (xv, wv) = (tape.leaf(x.clone())?, tape.leaf(w.clone())?);
    // sum(softmax(tanh(x·w)) ⊙ tanh(x·w))
    let h = tape.matmul(xv, wv)?;
    let h = tape.tanh(h)?;
    let p = tape.softmax(h, Axis::Cols)?;
    let m = tape.mul(p, h)?;
    let out = tape.sum(m)?;
    let grads = tape.backward(out)?;
    Ok((
        tape.value(out).data()[0],
        grads.get(xv).unwrap().clone(),
        grads.get(wv).unwrap().clone(),
    ))
}

fn main() -> sentifuse::Result<()> {
    let x = Tensor::matrix(2, 3, vec![0.5, -1.0, 0.25, 1.5, 0.3, -0.7])?;
    let w = Tensor::matrix(3, 2, vec![0.1, -0.4, 0.8, 0.2, -0.3, 0.6])?;
    let (value, dx, dw) = loss(&x, &w)?;
    println!("loss {value:.6}");
    println!("d/dx {:?}", dx.data());
    println!("d/dw {:?}", dw.data());

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..w.numel() {
        let mut plus = w.clone();
        plus.data_mut()[i] += h;
        let mut minus = w.clone();
        minus.data_mut()[i] -= h;
        let numeric = (loss(&x, &plus)?.0 - loss(&x, &minus)?.0) / (2.0 * h);
        worst = worst.max((numeric - dw.data()[i]).abs());
    }
    println!("largest |analytic - numeric| over w: {worst:.2e}");
    Ok(())
}
