use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::special::{digamma, ln_beta, trigamma};
use super::NnError;

/// Keeps Beta samples strictly inside (0, 1) so log-densities stay finite.
const EDGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    /// One categorical choice per sub-head (the joint single-agent baseline).
    MultiDiscrete(Vec<usize>),
    /// Point in `(0, 1)^n`.
    Continuous(Vec<f64>),
}

impl Action {
    pub fn as_discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            _ => None,
        }
    }

    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            Action::Continuous(v) => Some(v),
            _ => None,
        }
    }
}

/// Maps a network output vector to an action distribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyHead {
    Categorical { actions: usize },
    MultiCategorical { sizes: Vec<usize> },
    /// Independent Beta(α, β) per coordinate, α = 1 + softplus(raw_α),
    /// β = 1 + softplus(raw_β). Raw parameters are laid out as all α logits
    /// followed by all β logits.
    Beta { dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub action: Action,
    pub log_prob: f64,
    pub entropy: f64,
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 { x } else { x.exp().ln_1p() }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn categorical_entropy(logits: &[f64]) -> f64 {
    let lp = log_softmax(logits);
    -lp.iter().map(|l| l.exp() * l).sum::<f64>()
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn beta_log_density(a: f64, b: f64, x: f64) -> f64 {
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(a, b)
}

fn beta_entropy(a: f64, b: f64) -> f64 {
    ln_beta(a, b) - (a - 1.0) * digamma(a) - (b - 1.0) * digamma(b) + (a + b - 2.0) * digamma(a + b)
}

impl PolicyHead {
    pub fn param_count(&self) -> usize {
        match self {
            PolicyHead::Categorical { actions } => *actions,
            PolicyHead::MultiCategorical { sizes } => sizes.iter().sum(),
            PolicyHead::Beta { dim } => 2 * dim,
        }
    }

    fn check(&self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.param_count() {
            return Err(NnError::DimensionMismatch { expected: self.param_count(), got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NnError::NonFiniteParams);
        }
        Ok(())
    }

    fn chunks<'a>(&'a self, params: &'a [f64]) -> Vec<&'a [f64]> {
        match self {
            PolicyHead::Categorical { .. } => vec![params],
            PolicyHead::MultiCategorical { sizes } => {
                let mut out = Vec::with_capacity(sizes.len());
                let mut at = 0;
                for &s in sizes {
                    out.push(&params[at..at + s]);
                    at += s;
                }
                out
            }
            PolicyHead::Beta { .. } => unreachable!("beta heads are not chunked"),
        }
    }

    fn concentrations(dim: usize, params: &[f64]) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..dim).map(move |j| (1.0 + softplus(params[j]), 1.0 + softplus(params[dim + j])))
    }

    pub fn sample<R: Rng + ?Sized>(&self, params: &[f64], rng: &mut R) -> Result<Sample, NnError> {
        self.check(params)?;
        let action = match self {
            PolicyHead::Categorical { .. } => Action::Discrete(sample_index(&softmax(params), rng)),
            PolicyHead::MultiCategorical { .. } => Action::MultiDiscrete(
                self.chunks(params).iter().map(|c| sample_index(&softmax(c), rng)).collect(),
            ),
            PolicyHead::Beta { dim } => {
                let mut xs = Vec::with_capacity(*dim);
                for (a, b) in Self::concentrations(*dim, params) {
                    let dist = Beta::new(a, b).map_err(|_| NnError::NonFiniteParams)?;
                    xs.push(dist.sample(rng).clamp(EDGE, 1.0 - EDGE));
                }
                Action::Continuous(xs)
            }
        };
        let log_prob = self.log_prob(params, &action)?;
        let entropy = self.entropy(params)?;
        Ok(Sample { action, log_prob, entropy })
    }

    /// Argmax for categorical heads, the mean for Beta heads.
    pub fn greedy(&self, params: &[f64]) -> Result<Action, NnError> {
        self.check(params)?;
        Ok(match self {
            PolicyHead::Categorical { .. } => Action::Discrete(argmax(params)),
            PolicyHead::MultiCategorical { .. } => {
                Action::MultiDiscrete(self.chunks(params).iter().map(|c| argmax(c)).collect())
            }
            PolicyHead::Beta { dim } => {
                Action::Continuous(Self::concentrations(*dim, params).map(|(a, b)| a / (a + b)).collect())
            }
        })
    }

    pub fn probabilities(&self, params: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check(params)?;
        match self {
            PolicyHead::Categorical { .. } => Ok(softmax(params)),
            _ => Err(NnError::ActionMismatch("probabilities need a categorical head".into())),
        }
    }

    pub fn log_prob(&self, params: &[f64], action: &Action) -> Result<f64, NnError> {
        self.log_prob_grad(params, action, None)
    }

    pub fn entropy(&self, params: &[f64]) -> Result<f64, NnError> {
        self.entropy_grad(params, None)
    }

    /// Log-probability of `action`; when `grad` is given, adds
    /// `scale * d(log p)/d(params)` into it.
    pub fn log_prob_grad(
        &self,
        params: &[f64],
        action: &Action,
        mut grad: Option<(&mut [f64], f64)>,
    ) -> Result<f64, NnError> {
        self.check(params)?;
        match (self, action) {
            (PolicyHead::Categorical { actions }, Action::Discrete(a)) => {
                if a >= actions {
                    return Err(NnError::ActionMismatch(format!("action {a} out of {actions}")));
                }
                let lp = log_softmax(params);
                if let Some((g, scale)) = grad.as_mut() {
                    for (j, l) in lp.iter().enumerate() {
                        let onehot = if j == *a { 1.0 } else { 0.0 };
                        g[j] += *scale * (onehot - l.exp());
                    }
                }
                Ok(lp[*a])
            }
            (PolicyHead::MultiCategorical { sizes }, Action::MultiDiscrete(acts)) => {
                if acts.len() != sizes.len() || acts.iter().zip(sizes).any(|(a, s)| a >= s) {
                    return Err(NnError::ActionMismatch(format!("{acts:?} vs sizes {sizes:?}")));
                }
                let mut total = 0.0;
                let mut at = 0;
                for (chunk, &a) in self.chunks(params).into_iter().zip(acts) {
                    let lp = log_softmax(chunk);
                    if let Some((g, scale)) = grad.as_mut() {
                        for (j, l) in lp.iter().enumerate() {
                            let onehot = if j == a { 1.0 } else { 0.0 };
                            g[at + j] += *scale * (onehot - l.exp());
                        }
                    }
                    total += lp[a];
                    at += chunk.len();
                }
                Ok(total)
            }
            (PolicyHead::Beta { dim }, Action::Continuous(xs)) => {
                if xs.len() != *dim {
                    return Err(NnError::ActionMismatch(format!("expected {dim} coordinates, got {}", xs.len())));
                }
                let mut total = 0.0;
                for (j, ((a, b), &x)) in Self::concentrations(*dim, params).zip(xs).enumerate() {
                    if !(x > 0.0 && x < 1.0) {
                        return Err(NnError::ActionMismatch(format!("coordinate {x} outside (0,1)")));
                    }
                    total += beta_log_density(a, b, x);
                    if let Some((g, scale)) = grad.as_mut() {
                        let dsum = digamma(a + b);
                        let da = x.ln() - digamma(a) + dsum;
                        let db = (1.0 - x).ln() - digamma(b) + dsum;
                        g[j] += *scale * da * sigmoid(params[j]);
                        g[dim + j] += *scale * db * sigmoid(params[dim + j]);
                    }
                }
                Ok(total)
            }
            _ => Err(NnError::ActionMismatch(format!("{action:?} for {self:?}"))),
        }
    }

    /// Exact entropy; when `grad` is given, adds `scale * dH/d(params)`.
    pub fn entropy_grad(&self, params: &[f64], mut grad: Option<(&mut [f64], f64)>) -> Result<f64, NnError> {
        self.check(params)?;
        match self {
            PolicyHead::Categorical { .. } | PolicyHead::MultiCategorical { .. } => {
                let mut total = 0.0;
                let mut at = 0;
                for chunk in self.chunks(params) {
                    let h = categorical_entropy(chunk);
                    if let Some((g, scale)) = grad.as_mut() {
                        // dH/dz_j = -p_j (log p_j + H)
                        for (j, l) in log_softmax(chunk).iter().enumerate() {
                            g[at + j] += *scale * -l.exp() * (l + h);
                        }
                    }
                    total += h;
                    at += chunk.len();
                }
                Ok(total)
            }
            PolicyHead::Beta { dim } => {
                let mut total = 0.0;
                for (j, (a, b)) in Self::concentrations(*dim, params).enumerate() {
                    total += beta_entropy(a, b);
                    if let Some((g, scale)) = grad.as_mut() {
                        let t_sum = (a + b - 2.0) * trigamma(a + b);
                        let dha = -(a - 1.0) * trigamma(a) + t_sum;
                        let dhb = -(b - 1.0) * trigamma(b) + t_sum;
                        g[j] += *scale * dha * sigmoid(params[j]);
                        g[dim + j] += *scale * dhb * sigmoid(params[dim + j]);
                    }
                }
                Ok(total)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    const LN2: f64 = std::f64::consts::LN_2;

    /// softplus(r) = 1
    fn raw_for_one() -> f64 {
        (std::f64::consts::E - 1.0).ln()
    }

    #[test]
    fn fair_coin() {
        let head = PolicyHead::Categorical { actions: 2 };
        let p = [0.0, 0.0];
        assert!((head.log_prob(&p, &Action::Discrete(0)).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert!((head.log_prob(&p, &Action::Discrete(1)).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert!((head.entropy(&p).unwrap() - LN2).abs() < 1e-15);
    }

    #[test]
    fn uniform_beta_has_zero_log_density() {
        let head = PolicyHead::Beta { dim: 1 };
        // softplus(-inf) -> 0 is not reachable with finite input, use a very negative raw
        let p = [-800.0, -800.0];
        for &x in &[0.01, 0.3, 0.5, 0.99] {
            assert!(head.log_prob(&p, &Action::Continuous(vec![x])).unwrap().abs() < 1e-12);
        }
        assert!(head.entropy(&p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn beta_two_two_at_half() {
        let head = PolicyHead::Beta { dim: 1 };
        let r = raw_for_one();
        // density of Beta(2,2) is 6x(1-x)
        let lp = head.log_prob(&[r, r], &Action::Continuous(vec![0.5])).unwrap();
        assert!((lp - 1.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn categorical_log_probs_normalise() {
        let head = PolicyHead::Categorical { actions: 5 };
        let p = [0.3, -1.2, 4.0, 0.0, 2.2];
        let total: f64 = (0..5).map(|a| head.log_prob(&p, &Action::Discrete(a)).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(head.entropy(&p).unwrap() >= 0.0);
    }

    #[test]
    fn sampling_is_reproducible() {
        let head = PolicyHead::Beta { dim: 3 };
        let p = [0.1, 0.5, -0.3, 1.0, 0.0, 2.0];
        let a = head.sample(&p, &mut stream(9, "s")).unwrap();
        let b = head.sample(&p, &mut stream(9, "s")).unwrap();
        assert_eq!(a, b);
        let xs = a.action.as_continuous().unwrap();
        assert!(xs.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn beta_monte_carlo_mean() {
        let head = PolicyHead::Beta { dim: 1 };
        let p = [0.7, 1.9];
        let (a, b) = (1.0 + softplus(0.7), 1.0 + softplus(1.9));
        let mean = a / (a + b);
        let var = a * b / ((a + b).powi(2) * (a + b + 1.0));
        let mut rng = stream(11, "mc");
        let n = 100_000;
        let sum: f64 = (0..n)
            .map(|_| head.sample(&p, &mut rng).unwrap().action.as_continuous().unwrap()[0])
            .sum();
        let se = (var / n as f64).sqrt();
        assert!((sum / n as f64 - mean).abs() < 3.0 * se);
    }

    fn fd_check(head: &PolicyHead, params: &[f64], action: &Action) {
        let h = 1e-6;
        let mut g_lp = vec![0.0; params.len()];
        let mut g_h = vec![0.0; params.len()];
        head.log_prob_grad(params, action, Some((&mut g_lp, 1.0))).unwrap();
        head.entropy_grad(params, Some((&mut g_h, 1.0))).unwrap();
        for j in 0..params.len() {
            let mut up = params.to_vec();
            let mut dn = params.to_vec();
            up[j] += h;
            dn[j] -= h;
            let fd_lp = (head.log_prob(&up, action).unwrap() - head.log_prob(&dn, action).unwrap()) / (2.0 * h);
            let fd_h = (head.entropy(&up).unwrap() - head.entropy(&dn).unwrap()) / (2.0 * h);
            assert!((fd_lp - g_lp[j]).abs() < 1e-6 * (1.0 + fd_lp.abs()), "logp param {j}: {fd_lp} vs {}", g_lp[j]);
            assert!((fd_h - g_h[j]).abs() < 1e-6 * (1.0 + fd_h.abs()), "entropy param {j}: {fd_h} vs {}", g_h[j]);
        }
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        fd_check(&PolicyHead::Categorical { actions: 4 }, &[0.2, -0.5, 1.3, 0.0], &Action::Discrete(2));
        fd_check(
            &PolicyHead::MultiCategorical { sizes: vec![2, 3] },
            &[0.2, -0.5, 1.3, 0.0, -2.0],
            &Action::MultiDiscrete(vec![1, 0]),
        );
        fd_check(&PolicyHead::Beta { dim: 2 }, &[0.3, -1.0, 2.0, 0.4], &Action::Continuous(vec![0.2, 0.85]));
    }

    #[test]
    fn greedy_and_errors() {
        let cat = PolicyHead::Categorical { actions: 3 };
        assert_eq!(cat.greedy(&[0.0, 2.0, 1.0]).unwrap(), Action::Discrete(1));
        assert!(matches!(cat.sample(&[0.0, f64::NAN, 0.0], &mut stream(0, "x")), Err(NnError::NonFiniteParams)));
        assert!(matches!(cat.log_prob(&[0.0; 3], &Action::Discrete(3)), Err(NnError::ActionMismatch(_))));
        let beta = PolicyHead::Beta { dim: 1 };
        let r = raw_for_one();
        assert_eq!(beta.greedy(&[r, r]).unwrap(), Action::Continuous(vec![0.5]));
    }
}
