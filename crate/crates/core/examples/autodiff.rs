//! Reverse-mode differentiation on the tape, checked against a central
//! finite difference.

use plsm_lab::tape::Tape;
use plsm_lab::tensor::Tensor;

fn loss_of(w: &Tensor, x: &Tensor) -> (f64, Tensor) {
    let mut tape = Tape::new();
    let wv = tape.param(w.clone(), 0);
    let xv = tape.constant(x.clone());
    // mean(relu(x·w)²)
    let y = tape.matmul(xv, wv).unwrap();
    let r = tape.relu(y).unwrap();
    let s = tape.square(r).unwrap();
    let l = tape.mean(s).unwrap();
    let grads = tape.backward(l).unwrap();
    (tape.value(l).data()[0], grads.get_or_zeros(wv))
}

fn main() {
    let x = Tensor::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.3, 0.8, -1.1]]).unwrap();
    let w = Tensor::from_rows(&[vec![0.4, -0.2], vec![-0.7, 0.9], vec![0.1, 0.6]]).unwrap();
    let (loss, grad) = loss_of(&w, &x);
    println!("loss {loss:.6}");

    let h = 1e-6;
    for j in 0..w.numel() {
        let shifted = |by: f64| {
            let mut data = w.data().to_vec();
            data[j] += by;
            loss_of(&Tensor::new(w.shape().to_vec(), data).unwrap(), &x).0
        };
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        println!("dL/dw[{j}]  tape {:+.8}  finite difference {:+.8}", grad.data()[j], numeric);
    }
}
