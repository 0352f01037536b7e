//! Sinkhorn normalization, computed in the log domain.
//!
//! Each iteration is one full row pass followed by one full column pass.
//! Working with `log S` and log-sum-exp is the same iteration as normalizing
//! `exp(M/τ)` directly, with the row maximum subtracted before every `exp`.

use super::{NnError, Tensor};

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Intermediate log-matrices kept for the backward pass.
pub struct SinkhornCache {
    row_log_marginals: Vec<f64>,
    col_log_marginals: Vec<f64>,
    /// Output of every half-step, row pass first.
    steps: Vec<Tensor>,
    output: Tensor,
}

impl SinkhornCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

/// Scales `exp(log_kernel)` so that row `i` sums to `exp(row_log_marginals[i])`
/// and column `j` to `exp(col_log_marginals[j])`.
pub fn sinkhorn_log(
    log_kernel: &Tensor,
    row_log_marginals: &[f64],
    col_log_marginals: &[f64],
    iters: usize,
) -> Result<SinkhornCache, NnError> {
    let (n, m) = (log_kernel.rows(), log_kernel.cols());
    if row_log_marginals.len() != n || col_log_marginals.len() != m {
        return Err(NnError::Shape(format!(
            "sinkhorn marginals {}x{} for {:?}",
            row_log_marginals.len(),
            col_log_marginals.len(),
            log_kernel.shape()
        )));
    }
    log_kernel.ensure_finite("sinkhorn input")?;
    let mut l = log_kernel.clone();
    let mut steps = Vec::with_capacity(2 * iters);
    for _ in 0..iters {
        for i in 0..n {
            let row = l.row_mut(i);
            let shift = logsumexp(row.iter().copied()) - row_log_marginals[i];
            row.iter_mut().for_each(|v| *v -= shift);
        }
        steps.push(l.clone());
        for j in 0..m {
            let shift = logsumexp((0..n).map(|i| l.at(i, j))) - col_log_marginals[j];
            for i in 0..n {
                l.set(i, j, l.at(i, j) - shift);
            }
        }
        steps.push(l.clone());
    }
    let output = l.map(f64::exp);
    output.ensure_finite("sinkhorn output")?;
    Ok(SinkhornCache {
        row_log_marginals: row_log_marginals.to_vec(),
        col_log_marginals: col_log_marginals.to_vec(),
        steps,
        output,
    })
}

/// Gradient with respect to the log kernel, given the gradient of the output.
pub fn sinkhorn_log_backward(cache: &SinkhornCache, doutput: &Tensor) -> Tensor {
    let mut dl = doutput.clone();
    dl.data_mut()
        .iter_mut()
        .zip(cache.output.data())
        .for_each(|(g, p)| *g *= p);
    let (n, m) = (cache.output.rows(), cache.output.cols());
    for (k, step) in cache.steps.iter().enumerate().rev() {
        if k % 2 == 1 {
            // column pass: dL = dL' - softmax_col(L) * colsum(dL')
            for j in 0..m {
                let total: f64 = (0..n).map(|i| dl.at(i, j)).sum();
                let b = cache.col_log_marginals[j];
                for i in 0..n {
                    let p = (step.at(i, j) - b).exp();
                    dl.set(i, j, dl.at(i, j) - p * total);
                }
            }
        } else {
            // row pass
            for i in 0..n {
                let a = cache.row_log_marginals[i];
                let p_row: Vec<f64> = step.row(i).iter().map(|v| (v - a).exp()).collect();
                let row = dl.row_mut(i);
                let total: f64 = row.iter().sum();
                row.iter_mut().zip(p_row).for_each(|(g, p)| *g -= p * total);
            }
        }
    }
    dl
}

/// Doubly stochastic normalization of `exp(M/τ)` for a square score matrix.
pub fn sinkhorn(m: &Tensor, tau: f64, iters: usize) -> Result<Tensor, NnError> {
    if m.rows() != m.cols() {
        return Err(NnError::Shape(format!("sinkhorn needs a square matrix, got {:?}", m.shape())));
    }
    if !(tau > 0.0) {
        return Err(NnError::Shape(format!("sinkhorn temperature must be positive, got {tau}")));
    }
    let n = m.rows();
    let log_kernel = m.map(|v| v / tau);
    Ok(sinkhorn_log(&log_kernel, &vec![0.0; n], &vec![0.0; n], iters)?.output)
}

/// Sinkhorn over scores padded with a slack row and column.
///
/// Equivalent to the square `(n1+n2)×(n2+n1)` augmented problem where every
/// padding cell scores `slack`: the `n1` identical slack columns collapse into
/// one column with kernel multiplicity `n1` and target mass `n1`, and likewise
/// for the slack rows. The returned `(n1+1)×(n2+1)` matrix has real rows and
/// columns summing to one; the slack-slack cell carries no correspondence and
/// is reported as zero.
pub struct SlackSinkhorn {
    n1: usize,
    n2: usize,
    tau: f64,
    cache: SinkhornCache,
    corr: Tensor,
}

impl SlackSinkhorn {
    pub fn forward(scores: &Tensor, slack: f64, tau: f64, iters: usize) -> Result<Self, NnError> {
        let (n1, n2) = (scores.rows(), scores.cols());
        if n1 == 0 || n2 == 0 {
            return Err(NnError::Shape("slack sinkhorn needs non-empty scores".into()));
        }
        let ln1 = (n1 as f64).ln();
        let ln2 = (n2 as f64).ln();
        let mut logk = Tensor::zeros(&[n1 + 1, n2 + 1]);
        for i in 0..n1 {
            for j in 0..n2 {
                logk.set(i, j, scores.at(i, j) / tau);
            }
            logk.set(i, n2, slack / tau + ln1);
        }
        for j in 0..n2 {
            logk.set(n1, j, slack / tau + ln2);
        }
        logk.set(n1, n2, slack / tau + ln1 + ln2);
        let mut rows = vec![0.0; n1 + 1];
        rows[n1] = ln2;
        let mut cols = vec![0.0; n2 + 1];
        cols[n2] = ln1;
        let cache = sinkhorn_log(&logk, &rows, &cols, iters)?;
        let mut corr = cache.output.clone();
        corr.set(n1, n2, 0.0);
        Ok(SlackSinkhorn {
            n1,
            n2,
            tau,
            cache,
            corr,
        })
    }

    /// The padded soft correspondence.
    pub fn correspondence(&self) -> &Tensor {
        &self.corr
    }

    /// Real-to-real block, `n1×n2`.
    pub fn real_part(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.n1, self.n2]);
        for i in 0..self.n1 {
            out.row_mut(i).copy_from_slice(&self.corr.row(i)[..self.n2]);
        }
        out
    }

    /// Gradients `(d scores, d slack)` from the gradient of the padded matrix.
    pub fn backward(&self, dcorr: &Tensor) -> (Tensor, f64) {
        let mut dout = dcorr.clone();
        dout.set(self.n1, self.n2, 0.0);
        let dl = sinkhorn_log_backward(&self.cache, &dout);
        let mut dscores = Tensor::zeros(&[self.n1, self.n2]);
        let mut dslack = 0.0;
        for i in 0..=self.n1 {
            for j in 0..=self.n2 {
                let g = dl.at(i, j) / self.tau;
                if i < self.n1 && j < self.n2 {
                    dscores.set(i, j, g);
                } else {
                    dslack += g;
                }
            }
        }
        (dscores, dslack)
    }

    /// Same as [`SlackSinkhorn::backward`] but for a gradient on the real block only.
    pub fn backward_real(&self, dreal: &Tensor) -> (Tensor, f64) {
        let mut dcorr = Tensor::zeros(&[self.n1 + 1, self.n2 + 1]);
        for i in 0..self.n1 {
            dcorr.row_mut(i)[..self.n2].copy_from_slice(dreal.row(i));
        }
        self.backward(&dcorr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect())
    }

    #[test]
    fn zeros_give_uniform() {
        let s = sinkhorn(&Tensor::zeros(&[2, 2]), 1.0, 50).unwrap();
        assert!(s.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn dominant_diagonal() {
        let mut m = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            m.set(i, i, 10.0);
        }
        let s = sinkhorn(&m, 1.0, 50).unwrap();
        for i in 0..4 {
            assert!(s.at(i, i) > 0.99);
        }
        // more iterations reach the same fixed point
        let s200 = sinkhorn(&m, 1.0, 200).unwrap();
        assert!(s.max_abs_diff(&s200) < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(sinkhorn(&Tensor::zeros(&[2, 3]), 1.0, 5).is_err());
        assert!(sinkhorn(&Tensor::zeros(&[2, 2]), 0.0, 5).is_err());
        let nan = Tensor::matrix(1, 1, vec![f64::NAN]);
        assert!(sinkhorn(&nan, 1.0, 5).is_err());
    }

    #[test]
    fn huge_scores_do_not_overflow() {
        let m = Tensor::matrix(2, 2, vec![1e4, 0.0, 0.0, 1e4]);
        let s = sinkhorn(&m, 0.05, 50).unwrap();
        assert!((s.at(0, 0) - 1.0).abs() < 1e-12);
    }

    /// Explicit square augmentation, normalized and then collapsed.
    fn augmented_reference(scores: &Tensor, slack: f64, tau: f64, iters: usize) -> Tensor {
        let (n1, n2) = (scores.rows(), scores.cols());
        let n = n1 + n2;
        let mut big = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                let v = if i < n1 && j < n2 { scores.at(i, j) } else { slack };
                big.set(i, j, v);
            }
        }
        let s = sinkhorn(&big, tau, iters).unwrap();
        let mut out = Tensor::zeros(&[n1 + 1, n2 + 1]);
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (i.min(n1), j.min(n2));
                out.set(a, b, out.at(a, b) + s.at(i, j));
            }
        }
        out.set(n1, n2, 0.0);
        out
    }

    #[test]
    fn slack_form_equals_augmented_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (n1, n2) in [(1, 1), (3, 5), (6, 2), (4, 4)] {
            let scores = random(&mut rng, n1, n2, 1.0);
            let slack = rng.gen_range(-0.5..0.5);
            let fast = SlackSinkhorn::forward(&scores, slack, 0.3, 30).unwrap();
            let slow = augmented_reference(&scores, slack, 0.3, 30);
            assert!(fast.correspondence().max_abs_diff(&slow) < 1e-10, "{n1}x{n2}");
        }
    }

    #[test]
    fn slack_rows_and_columns_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let scores = random(&mut rng, 7, 4, 2.0);
        let s = SlackSinkhorn::forward(&scores, 0.1, 1.0, 50).unwrap();
        let c = s.correspondence();
        for i in 0..7 {
            assert!((c.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        for j in 0..4 {
            assert!(((0..8).map(|i| c.at(i, j)).sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(c.at(7, 4), 0.0);
    }

    #[test]
    fn log_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logk = random(&mut rng, 3, 4, 1.0);
        let rows = vec![0.0, 0.0, 0.3f64.ln() + 1.0];
        let cols = vec![0.1, -0.2, 0.0, 0.4];
        let probe = random(&mut rng, 3, 4, 1.0);
        let objective = |lk: &Tensor| -> f64 {
            let c = sinkhorn_log(lk, &rows, &cols, 7).unwrap();
            c.output().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let cache = sinkhorn_log(&logk, &rows, &cols, 7).unwrap();
        let analytic = sinkhorn_log_backward(&cache, &probe);
        let h = 1e-5;
        for k in 0..logk.len() {
            let mut plus = logk.clone();
            plus.data_mut()[k] += h;
            let mut minus = logk.clone();
            minus.data_mut()[k] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            assert!((fd - analytic.data()[k]).abs() < 1e-8, "{k}: {fd} vs {}", analytic.data()[k]);
        }
    }
}
