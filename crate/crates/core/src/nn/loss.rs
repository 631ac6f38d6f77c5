//! Training losses. Both return the batch-mean loss and its gradient with
//! respect to the network output.

use super::quant::{GROUPS, NUM_BINS};
use super::{NnError, Result, Scalar, Tensor};

fn check_batch<T: Scalar>(pred: &Tensor<T>, width: usize, labels: usize) -> Result<usize> {
    let n = pred.batch();
    if pred.shape() != [n, width] || labels != n {
        return Err(NnError::ShapeMismatch(format!(
            "loss expects ({labels}, {width}) outputs, got {:?}",
            pred.shape()
        )));
    }
    Ok(n)
}

/// Mean over the batch of `0.5 * |pred - label|^2`.
pub fn l2_loss<T: Scalar>(pred: &Tensor<T>, labels: &[[f64; GROUPS]]) -> Result<(f64, Tensor<T>)> {
    let n = check_batch(pred, GROUPS, labels.len())?;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (row, label) in pred.data().chunks(GROUPS).zip(labels) {
        for (&p, &l) in row.iter().zip(label) {
            let e = p.f64() - l;
            loss += 0.5 * e * e;
            grad.push(T::of(e / n as f64));
        }
    }
    Ok((loss / n as f64, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Sum over the 8 groups of softmax cross-entropy, averaged over the batch.
/// Takes raw scores, not probabilities.
pub fn cross_entropy_loss<T: Scalar>(logits: &Tensor<T>, bins: &[[usize; GROUPS]]) -> Result<(f64, Tensor<T>)> {
    let n = check_batch(logits, GROUPS * NUM_BINS, bins.len())?;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, label) in logits.data().chunks(GROUPS * NUM_BINS).zip(bins) {
        for (z, &target) in row.chunks(NUM_BINS).zip(label) {
            if target >= NUM_BINS {
                return Err(NnError::ShapeMismatch(format!("bin {target} out of range")));
            }
            let max = z.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
            let exps: Vec<f64> = z.iter().map(|v| (v.f64() - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            loss += sum.ln() + max - z[target].f64();
            for (i, e) in exps.iter().enumerate() {
                let p = e / sum - if i == target { 1.0 } else { 0.0 };
                grad.push(T::of(p / n as f64));
            }
        }
    }
    Ok((loss / n as f64, Tensor::new(logits.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn l2_values_and_gradient() {
        let label = [[1.0, -2.0, 0.5, 0.0, 3.0, 1.0, -1.0, 2.0]];
        let exact = Tensor::new(vec![1, 8], label[0].to_vec()).unwrap();
        assert_eq!(l2_loss(&exact, &label).unwrap().0, 0.0);
        let mut off = label[0];
        off[3] += 1.0;
        let t = Tensor::new(vec![1, 8], off.to_vec()).unwrap();
        assert!((l2_loss(&t, &label).unwrap().0 - 0.5).abs() < 1e-15);

        let labels = [label[0], [0.0; 8]];
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.9).sin() * 3.0).collect();
        let (_, g) = l2_loss(&Tensor::new(vec![2, 8], x.clone()).unwrap(), &labels).unwrap();
        let num = numeric_grad(|v| l2_loss(&Tensor::new(vec![2, 8], v.to_vec()).unwrap(), &labels).unwrap().0, &x);
        for (a, b) in g.data().iter().zip(&num) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn cross_entropy_uniform_and_gradient() {
        let t = Tensor::<f64>::zeros(vec![3, 168]);
        let (loss, _) = cross_entropy_loss(&t, &[[0; 8], [5; 8], [20; 8]]).unwrap();
        assert!((loss - 8.0 * 21f64.ln()).abs() < 1e-12);

        let mut sharp = vec![0.0; 168];
        for g in 0..8 {
            sharp[g * 21 + 4] = 40.0;
        }
        let (l, _) = cross_entropy_loss(&Tensor::new(vec![1, 168], sharp).unwrap(), &[[4; 8]]).unwrap();
        assert!(l < 1e-12);

        let bins = [[1, 2, 3, 4, 5, 6, 7, 8], [20, 0, 10, 10, 3, 3, 9, 1]];
        let x: Vec<f64> = (0..336).map(|i| (i as f64 * 0.37).cos() * 2.0).collect();
        let (_, g) = cross_entropy_loss(&Tensor::new(vec![2, 168], x.clone()).unwrap(), &bins).unwrap();
        let num = numeric_grad(
            |v| cross_entropy_loss(&Tensor::new(vec![2, 168], v.to_vec()).unwrap(), &bins).unwrap().0,
            &x,
        );
        for (a, b) in g.data().iter().zip(&num) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}
