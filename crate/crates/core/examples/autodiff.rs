// Gradients of a one-layer softmax classifier on the tape, checked against
// a central difference.

use ssbnn::tensor::{backprop, Tape};
use ssbnn::Tensor;

fn loss(w: &Tensor, x: &Tensor, y: &[usize]) -> (f64, Tensor) {
    let mut tape = Tape::new();
    let wv = tape.param(w.clone());
    let xv = tape.constant(x.clone());
    let logits = tape.matmul_t(xv, wv).unwrap();
    let l = tape.cross_entropy(logits, y).unwrap();
    let g = backprop(&tape, l).unwrap().get(wv);
    (tape.value(l).item(), g)
}

fn run_example() {
    let x = Tensor::matrix(3, 2, vec![1.0, 0.5, -0.3, 2.0, 0.8, -1.1]).unwrap();
    let w = Tensor::matrix(2, 2, vec![0.2, -0.4, 0.1, 0.3]).unwrap();
    let y = [0, 1, 0];
    let (value, grad) = loss(&w, &x, &y);
    println!("loss {value:.6}");

    let h = 1e-6;
    for j in 0..w.len() {
        let mut up = w.clone();
        up.data_mut()[j] += h;
        let mut down = w.clone();
        down.data_mut()[j] -= h;
        let fd = (loss(&up, &x, &y).0 - loss(&down, &x, &y).0) / (2.0 * h);
        println!("dL/dw[{j}] tape {:+.8} fd {fd:+.8}", grad.data()[j]);
        assert!((grad.data()[j] - fd).abs() < 1e-7);
    }
}

fn main() {
    run_example();
}
