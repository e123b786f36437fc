//! Hard, soft and blended distillation losses.

use serde::{Deserialize, Serialize};

use crate::autodiff::softmax_slice;
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_CLAMP, 1]` before every log.
pub const PROB_CLAMP: f64 = 1e-12;

/// Which distribution the soft term compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SoftMode {
    /// `−Σ softmax_T(teacher)·log softmax_T(student)`: the usual KD target.
    #[default]
    TeacherVsStudent,
    /// `−Σ softmax_T(y_true)·log softmax_T(teacher)`, exactly as the loss is
    /// written in the method description. It has no student term, so it
    /// contributes nothing to the student gradient.
    PaperLiteral,
}

impl std::str::FromStr for SoftMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher-vs-student" => Ok(SoftMode::TeacherVsStudent),
            "paper-literal" => Ok(SoftMode::PaperLiteral),
            other => Err(Error::Config(format!("unknown soft mode '{other}'"))),
        }
    }
}

pub(crate) fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("temperature must be positive and finite, got {t}")));
    }
    Ok(())
}

fn clamped_ln(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0).ln()
}

/// `−Σ_c target_c · log clamp(p_c)`.
fn cross_entropy(target: &[f64], probs: &[f64]) -> f64 {
    -target.iter().zip(probs).map(|(&t, &p)| t * clamped_ln(p)).sum::<f64>()
}

/// Mean cross-entropy of `[N,M]` student probabilities against one-hot labels.
pub fn hard_loss(student_probs: &Tensor, labels: &Tensor) -> Result<f64> {
    student_probs.check_same_shape(labels)?;
    let [n, m] = student_probs.shape()[..] else {
        return Err(shape_err!("hard loss expects [N,M] tensors, got {:?}", student_probs.shape()));
    };
    let total: f64 = student_probs
        .data()
        .chunks_exact(m)
        .zip(labels.data().chunks_exact(m))
        .map(|(p, y)| cross_entropy(y, p))
        .sum();
    Ok(total / n as f64)
}

/// Soft loss for one sample; see [`SoftMode`].
pub fn soft_loss(
    y_true: &Tensor,
    teacher_logits: &Tensor,
    student_logits: &Tensor,
    temperature: f64,
    mode: SoftMode,
) -> Result<f64> {
    check_temperature(temperature)?;
    y_true.check_same_shape(teacher_logits)?;
    y_true.check_same_shape(student_logits)?;
    let teacher = softmax_slice(teacher_logits.data(), temperature);
    Ok(match mode {
        SoftMode::TeacherVsStudent => {
            cross_entropy(&teacher, &softmax_slice(student_logits.data(), temperature))
        }
        SoftMode::PaperLiteral => cross_entropy(&softmax_slice(y_true.data(), temperature), &teacher),
    })
}

/// `α·hard + (1−α)·soft`.
pub fn distill_loss(hard: f64, soft: f64, alpha: f64) -> f64 {
    alpha * hard + (1.0 - alpha) * soft
}

/// Loss `−Σ target·log clamp(softmax_T(logits))` and its gradient with
/// respect to `logits`. Components whose probability sits below the clamp
/// get no gradient through the log, matching the clamped forward exactly.
pub(crate) fn softmax_cross_entropy(target: &[f64], logits: &[f64], temperature: f64) -> (f64, Vec<f64>) {
    let p = softmax_slice(logits, temperature);
    let loss = cross_entropy(target, &p);
    let clamped = p.iter().any(|&v| v < PROB_CLAMP);
    let grad = if clamped {
        let g: Vec<f64> = target
            .iter()
            .zip(&p)
            .map(|(&t, &pc)| if pc >= PROB_CLAMP { -t / pc } else { 0.0 })
            .collect();
        let dot: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        p.iter().zip(&g).map(|(&pj, &gj)| pj * (gj - dot) / temperature).collect()
    } else {
        // targets sum to one, so the Jacobian product collapses to (p − t)/T
        p.iter().zip(target).map(|(&pj, &tj)| (pj - tj) / temperature).collect()
    };
    (loss, grad)
}

pub(crate) fn one_hot(label: usize, m: usize) -> Vec<f64> {
    let mut v = vec![0.0; m];
    v[label] = 1.0;
    v
}

/// Per-sample value of the blended objective and its logit gradient.
#[derive(Debug, Clone)]
pub struct SampleObjective {
    pub loss: f64,
    pub hard: f64,
    pub soft: f64,
    pub logit_grad: Vec<f64>,
}

/// Evaluates `α·hard + (1−α)·soft` for one sample. With `teacher_logits`
/// absent, or `α = 1`, only the hard term is computed.
pub(crate) fn sample_objective(
    label: usize,
    student_logits: &[f64],
    teacher_logits: Option<&[f64]>,
    alpha: f64,
    temperature: f64,
    mode: SoftMode,
) -> SampleObjective {
    let m = student_logits.len();
    let target = one_hot(label, m);
    let (hard, hard_grad) = softmax_cross_entropy(&target, student_logits, 1.0);
    let teacher = match teacher_logits {
        Some(t) if alpha < 1.0 => t,
        _ => {
            return SampleObjective {
                loss: hard,
                hard,
                soft: 0.0,
                logit_grad: hard_grad,
            }
        }
    };
    let (soft, soft_grad) = match mode {
        SoftMode::TeacherVsStudent => {
            softmax_cross_entropy(&softmax_slice(teacher, temperature), student_logits, temperature)
        }
        SoftMode::PaperLiteral => {
            let soft = cross_entropy(&softmax_slice(&target, temperature), &softmax_slice(teacher, temperature));
            (soft, vec![0.0; m])
        }
    };
    SampleObjective {
        loss: distill_loss(hard, soft, alpha),
        hard,
        soft,
        logit_grad: hard_grad
            .iter()
            .zip(&soft_grad)
            .map(|(h, s)| alpha * h + (1.0 - alpha) * s)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hard_loss_examples() {
        let p = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let y = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        assert!(hard_loss(&p, &y).unwrap().abs() <= 1e-11);

        let p = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        assert!((hard_loss(&p, &y).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn hard_loss_batches_average() {
        let p1 = [0.9, 0.1, 0.3, 0.7];
        let y1 = [1.0, 0.0, 1.0, 0.0];
        let p2 = [0.6, 0.4];
        let y2 = [0.0, 1.0];
        let l1 = hard_loss(&Tensor::new(vec![2, 2], p1.to_vec()).unwrap(), &Tensor::new(vec![2, 2], y1.to_vec()).unwrap()).unwrap();
        let l2 = hard_loss(&Tensor::new(vec![1, 2], p2.to_vec()).unwrap(), &Tensor::new(vec![1, 2], y2.to_vec()).unwrap()).unwrap();
        let all_p: Vec<f64> = p1.iter().chain(&p2).copied().collect();
        let all_y: Vec<f64> = y1.iter().chain(&y2).copied().collect();
        let l = hard_loss(&Tensor::new(vec![3, 2], all_p).unwrap(), &Tensor::new(vec![3, 2], all_y).unwrap()).unwrap();
        assert!((l - (2.0 * l1 + l2) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn self_distillation_is_entropy() {
        let z = Tensor::from_vec(vec![1.3, -0.2, 0.4]);
        let y = Tensor::from_vec(vec![0.0, 1.0, 0.0]);
        let t = 4.0;
        let loss = soft_loss(&y, &z, &z, t, SoftMode::TeacherVsStudent).unwrap();
        let p = softmax_slice(z.data(), t);
        let entropy = -p.iter().map(|v| v * v.ln()).sum::<f64>();
        assert!((loss - entropy).abs() < 1e-12);
    }

    #[test]
    fn paper_literal_ignores_student() {
        let y = Tensor::from_vec(vec![1.0, 0.0, 0.0]);
        let teacher = Tensor::from_vec(vec![0.5, 2.0, -1.0]);
        let a = soft_loss(&y, &teacher, &Tensor::from_vec(vec![9.0, 0.0, 0.0]), 5.0, SoftMode::PaperLiteral).unwrap();
        let b = soft_loss(&y, &teacher, &Tensor::from_vec(vec![-3.0, 1.0, 7.0]), 5.0, SoftMode::PaperLiteral).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn paper_literal_two_class_value() {
        // softmax([1,0]) = [σ(1), σ(-1)], softmax([2,0]) = [σ(2), σ(-2)]
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let expected = -(sig(1.0) * sig(2.0).ln() + sig(-1.0) * sig(-2.0).ln());
        let got = soft_loss(
            &Tensor::from_vec(vec![1.0, 0.0]),
            &Tensor::from_vec(vec![2.0, 0.0]),
            &Tensor::from_vec(vec![0.0, 0.0]),
            1.0,
            SoftMode::PaperLiteral,
        )
        .unwrap();
        assert!((got - expected).abs() < 1e-12);
        // independent high-precision evaluation of the same expression
        assert!((got - 0.664_810_853_783).abs() < 1e-11, "{got}");
    }

    #[test]
    fn soft_loss_rejects_bad_temperature() {
        let z = Tensor::from_vec(vec![0.0, 1.0]);
        assert!(matches!(soft_loss(&z, &z, &z, 0.0, SoftMode::TeacherVsStudent), Err(Error::Domain(_))));
    }

    #[test]
    fn blend_endpoints() {
        assert_eq!(distill_loss(0.1, 0.3, 1.0), 0.1);
        assert_eq!(distill_loss(0.1, 0.3, 0.0), 0.3);
        assert!((distill_loss(0.1, 0.3, 0.7) - 0.16).abs() < 1e-15);
    }

    #[test]
    fn clamped_gradient_matches_finite_differences() {
        // the first class is saturated well below the clamp
        let logits = [-40.0, 3.0, 2.5];
        let target = [0.2, 0.5, 0.3];
        let (_, grad) = softmax_cross_entropy(&target, &logits, 1.0);
        let h = 1e-6;
        for j in 0..3 {
            let mut up = logits;
            up[j] += h;
            let mut dn = logits;
            dn[j] -= h;
            let fd = (softmax_cross_entropy(&target, &up, 1.0).0 - softmax_cross_entropy(&target, &dn, 1.0).0) / (2.0 * h);
            assert!((fd - grad[j]).abs() < 1e-6, "j={j} fd={fd} an={}", grad[j]);
        }
    }
}
