use super::net::sigmoid;
use super::tensor::Tensor2;
use crate::error::{check_dim, Error, Result};

/// Probabilities are clamped to `[EPS_CLAMP, 1 - EPS_CLAMP]` before logs.
pub const EPS_CLAMP: f64 = 1e-7;

fn check_bits(bits: &[f64]) -> Result<()> {
    match bits.iter().find(|b| **b != 0.0 && **b != 1.0) {
        Some(b) => Err(Error::InvalidBit(*b)),
        None => Ok(()),
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS_CLAMP, 1.0 - EPS_CLAMP)
}

fn bce_term(p: f64, b: f64) -> f64 {
    let p = clamp_prob(p);
    -(b * p.ln() + (1.0 - b) * (1.0 - p).ln())
}

/// Mean binary cross-entropy over `probs.len()` bits and its gradient with
/// respect to each probability.
pub fn bce_loss(probs: &[f64], bits: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim("bce length", probs.len(), bits.len())?;
    check_bits(bits)?;
    let n = probs.len() as f64;
    let loss = probs.iter().zip(bits).map(|(p, b)| bce_term(*p, *b)).sum::<f64>() / n;
    let grad = probs
        .iter()
        .zip(bits)
        .map(|(p, b)| {
            let p = clamp_prob(*p);
            -(b / p - (1.0 - b) / (1.0 - p)) / n
        })
        .collect();
    Ok((loss, grad))
}

/// Batched BCE evaluated from pre-sigmoid logits.
///
/// The returned loss is the mean clamped BCE of `sigmoid(logits)` over every
/// entry; the gradient is the exact derivative `(p - b) / n` of the unclamped
/// loss with respect to the logits, which does not vanish when the sigmoid
/// saturates on the wrong side.
pub fn bce_with_logits(logits: &Tensor2, bits: &Tensor2) -> Result<(f64, Tensor2)> {
    if logits.shape() != bits.shape() {
        return Err(Error::Dimension {
            context: "bce batch shape".into(),
            expected: bits.data().len(),
            got: logits.data().len(),
        });
    }
    check_bits(bits.data())?;
    let n = logits.data().len() as f64;
    let mut grad = Tensor2::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for ((g, z), b) in grad.data_mut().iter_mut().zip(logits.data()).zip(bits.data()) {
        let p = sigmoid(*z);
        loss += bce_term(p, *b);
        *g = (p - b) / n;
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_probabilities_give_ln2() {
        let (l, _) = bce_loss(&[0.5; 6], &[0., 1., 1., 0., 1., 0.]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let bits = [0., 1., 1., 0.];
        let (l, _) = bce_loss(&bits, &bits).unwrap();
        assert!(l >= 0.0 && l <= -(1.0 - EPS_CLAMP).ln() + 1e-15, "{l}");
    }

    #[test]
    fn closed_form_single_bit() {
        let (l, g) = bce_loss(&[0.8], &[1.0]).unwrap();
        assert!((l - 0.223_143_551_314_209_7).abs() < 1e-12);
        assert!((g[0] + 1.25).abs() < 1e-12);
    }

    #[test]
    fn errors_on_bad_input() {
        assert!(matches!(bce_loss(&[0.5], &[0.5]), Err(Error::InvalidBit(_))));
        assert!(matches!(bce_loss(&[0.5, 0.5], &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn logits_gradient_matches_chain_rule() {
        let z = Tensor2::from_vec(1, 3, vec![0.3, -1.2, 2.0]).unwrap();
        let b = Tensor2::from_vec(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let (l, g) = bce_with_logits(&z, &b).unwrap();
        let probs: Vec<f64> = z.data().iter().map(|v| sigmoid(*v)).collect();
        let (l2, gp) = bce_loss(&probs, b.data()).unwrap();
        assert!((l - l2).abs() < 1e-14);
        for i in 0..3 {
            let chain = gp[i] * probs[i] * (1.0 - probs[i]);
            assert!((g.data()[i] - chain).abs() < 1e-12);
        }
    }
}
