use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{clip_grad_norm, Adam, Mlp};
use super::{LearnError, TrainConfig};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// Generalized advantage estimates and returns.
///
/// `bootstrap` is the value after the last step, used only when that step is not terminal.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), LearnError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(LearnError::LengthMismatch { rewards: n, values: values.len(), dones: dones.len() });
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        adv[t] = delta + gamma * lambda * live * next_adv;
        next_adv = adv[t];
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to zero mean and unit (population) sd; an all-equal batch becomes zeros.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let sd = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for a in adv.iter_mut() {
        *a = if sd > 1e-12 { (*a - mean) / sd } else { 0.0 };
    }
}

/// Running observation mean/variance (parallel Welford merge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub count: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Normalizer {
    pub fn new(dim: usize) -> Normalizer {
        Normalizer { count: 0.0, mean: vec![0.0; dim], var: vec![1.0; dim] }
    }

    pub fn update(&mut self, batch: &[Vec<f64>]) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let dim = self.mean.len();
        let bm: Vec<f64> = (0..dim).map(|j| batch.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let bv: Vec<f64> = (0..dim).map(|j| batch.iter().map(|x| (x[j] - bm[j]).powi(2)).sum::<f64>() / n).collect();
        let total = self.count + n;
        for j in 0..dim {
            let d = bm[j] - self.mean[j];
            let m2 = self.var[j] * self.count + bv[j] * n + d * d * self.count * n / total;
            self.mean[j] += d * n / total;
            self.var[j] = m2 / total;
        }
        self.count = total;
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(v, (m, s2))| ((v - m) / (s2.sqrt() + 1e-8)).clamp(-10.0, 10.0))
            .collect()
    }
}

/// Diagonal Gaussian policy with a state-independent learned log-std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn sample<R: Rng>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64), LearnError> {
        let mu = self.mean.forward(obs)?;
        let a: Vec<f64> = mu
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lp = log_prob(&mu, &self.log_std, &a);
        Ok((a, lp))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64, LearnError> {
        let mu = self.mean.forward(obs)?;
        if action.len() != mu.len() {
            return Err(LearnError::DimensionMismatch { expected: mu.len(), got: action.len() });
        }
        Ok(log_prob(&mu, &self.log_std, action))
    }

    /// Parameter vector: mean-network parameters followed by the log-std.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.mean.params().to_vec();
        p.extend_from_slice(&self.log_std);
        p
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let n = self.mean.params().len();
        self.mean.params_mut().copy_from_slice(&p[..n]);
        self.log_std.copy_from_slice(&p[n..]);
    }

    /// Gradient of `log π(a | obs)` with respect to [`flat_params`](Self::flat_params).
    pub fn log_prob_grad(&self, obs: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>), LearnError> {
        let cache = self.mean.forward_cached(obs)?;
        let mu = cache.output();
        let n = self.mean.params().len();
        let mut g = vec![0.0; n + self.log_std.len()];
        let (dmu, dls): (Vec<f64>, Vec<f64>) = mu
            .iter()
            .zip(&self.log_std)
            .zip(action)
            .map(|((m, ls), a)| {
                let var = (2.0 * ls).exp();
                let z2 = (a - m).powi(2) / var;
                ((a - m) / var, z2 - 1.0)
            })
            .unzip();
        self.mean.backward(&cache, &dmu, &mut g[..n]);
        g[n..].copy_from_slice(&dls);
        Ok((log_prob(mu, &self.log_std, action), g))
    }
}

pub fn log_prob(mu: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    mu.iter()
        .zip(log_std)
        .zip(a)
        .map(|((m, ls), x)| -0.5 * ((x - m) / ls.exp()).powi(2) - ls - 0.5 * LOG_2PI)
        .sum()
}

/// One PPO update's input. Observations are already normalized.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PpoStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoOptimizers {
    pub policy: Adam,
    pub value: Adam,
}

impl PpoOptimizers {
    pub fn new(policy: &GaussianPolicy, value: &Mlp, cfg: &TrainConfig) -> PpoOptimizers {
        PpoOptimizers {
            policy: Adam::new(policy.flat_params().len(), cfg.policy_lr),
            value: Adam::new(value.params().len(), cfg.value_lr),
        }
    }
}

/// Per-sample clipped-surrogate value and its gradient, given `log π` and its gradient.
fn surrogate_term(lp: f64, old_lp: f64, adv: f64, eps: f64) -> (f64, f64, bool) {
    let ratio = (lp - old_lp).exp();
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    let unclipped_obj = ratio * adv;
    let clipped_obj = clipped * adv;
    if unclipped_obj <= clipped_obj {
        (unclipped_obj, ratio * adv, false)
    } else {
        (clipped_obj, 0.0, true)
    }
}

/// Clipped-surrogate policy update plus value regression over `epochs` shuffled
/// minibatch passes. On a non-finite loss or gradient all parameters and optimizer
/// states are restored and `NonFiniteLoss` is returned.
pub fn ppo_update<R: Rng>(
    policy: &mut GaussianPolicy,
    value: &mut Mlp,
    opt: &mut PpoOptimizers,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<PpoStats, LearnError> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let n = batch.len();
    if batch.actions.len() != n || batch.log_probs.len() != n || batch.advantages.len() != n || batch.returns.len() != n
    {
        return Err(LearnError::DimensionMismatch { expected: n, got: batch.actions.len() });
    }
    let saved = (policy.clone(), value.clone(), opt.clone());
    let result = ppo_epochs(policy, value, opt, batch, cfg, rng);
    if result.is_err() {
        (*policy, *value, *opt) = saved;
    }
    result
}

fn ppo_epochs<R: Rng>(
    policy: &mut GaussianPolicy,
    value: &mut Mlp,
    opt: &mut PpoOptimizers,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<PpoStats, LearnError> {
    let n = batch.len();
    let eps = cfg.clip_ratio;
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = PpoStats::default();
    let mut count = 0usize;
    let n_policy = policy.flat_params().len();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let mut gp = vec![0.0; n_policy];
            let mut gv = vec![0.0; value.params().len()];
            let m = chunk.len() as f64;
            for &i in chunk {
                let (lp, g) = policy.log_prob_grad(&batch.obs[i], &batch.actions[i])?;
                let (obj, scale, clipped) = surrogate_term(lp, batch.log_probs[i], batch.advantages[i], eps);
                let log_ratio = lp - batch.log_probs[i];
                stats.surrogate += obj;
                stats.approx_kl += log_ratio.exp() - 1.0 - log_ratio;
                stats.clip_fraction += if clipped { 1.0 } else { 0.0 };
                // descent on the negated objective
                if scale != 0.0 {
                    for (a, b) in gp.iter_mut().zip(&g) {
                        *a -= scale * b / m;
                    }
                }
                for k in n_policy - policy.action_dim()..n_policy {
                    gp[k] -= cfg.entropy_coef / m;
                }
                let cache = value.forward_cached(&batch.obs[i])?;
                let err = cache.output()[0] - batch.returns[i];
                stats.value_loss += 0.5 * err * err;
                value.backward(&cache, &[err / m], &mut gv);
                count += 1;
            }
            if !(stats.surrogate.is_finite() && stats.value_loss.is_finite())
                || gp.iter().chain(&gv).any(|g| !g.is_finite())
            {
                return Err(LearnError::NonFiniteLoss);
            }
            clip_grad_norm(&mut gp, cfg.max_grad_norm);
            clip_grad_norm(&mut gv, cfg.max_grad_norm);
            let mut p = policy.flat_params();
            opt.policy.step(&mut p, &gp);
            for ls in &mut p[n_policy - policy.action_dim()..] {
                *ls = ls.clamp(cfg.log_std_min, cfg.log_std_max);
            }
            policy.set_flat_params(&p);
            opt.value.step(value.params_mut(), &gv);
        }
    }
    let c = count.max(1) as f64;
    Ok(PpoStats {
        surrogate: stats.surrogate / c,
        value_loss: stats.value_loss / c,
        approx_kl: stats.approx_kl / c,
        clip_fraction: stats.clip_fraction / c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiscStats {
    pub loss: f64,
    pub mean_real: f64,
    pub mean_fake: f64,
}

/// Least-squares objective `½(D(real) − 1)² + ½(D(fake) + 1)²`, averaged per set.
pub fn discriminator_loss(disc: &Mlp, real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<f64, LearnError> {
    let mut l = 0.0;
    for x in real {
        l += 0.5 * (disc.forward(x)?[0] - 1.0).powi(2) / real.len() as f64;
    }
    for x in fake {
        l += 0.5 * (disc.forward(x)?[0] + 1.0).powi(2) / fake.len() as f64;
    }
    Ok(l)
}

/// Gradient of [`discriminator_loss`].
pub fn discriminator_grad(disc: &Mlp, real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<Vec<f64>, LearnError> {
    let mut g = vec![0.0; disc.params().len()];
    for (set, label) in [(real, 1.0), (fake, -1.0)] {
        for x in set {
            let cache = disc.forward_cached(x)?;
            disc.backward(&cache, &[(cache.output()[0] - label) / set.len() as f64], &mut g);
        }
    }
    Ok(g)
}

/// `steps` Adam steps on minibatches drawn with replacement from both sets.
pub fn train_discriminator<R: Rng>(
    disc: &mut Mlp,
    opt: &mut Adam,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    steps: usize,
    minibatch: usize,
    rng: &mut R,
) -> Result<DiscStats, LearnError> {
    if real.is_empty() {
        return Err(LearnError::DimensionMismatch { expected: 1, got: 0 });
    }
    if fake.is_empty() {
        return Err(LearnError::DimensionMismatch { expected: real.len(), got: 0 });
    }
    for x in real.iter().chain(fake) {
        if x.len() != disc.input_dim() {
            return Err(LearnError::DimensionMismatch { expected: disc.input_dim(), got: x.len() });
        }
    }
    let mb = minibatch.max(1);
    for _ in 0..steps {
        let r: Vec<Vec<f64>> = (0..mb).map(|_| real[rng.random_range(0..real.len())].clone()).collect();
        let f: Vec<Vec<f64>> = (0..mb).map(|_| fake[rng.random_range(0..fake.len())].clone()).collect();
        let g = discriminator_grad(disc, &r, &f)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(LearnError::NonFiniteLoss);
        }
        opt.step(disc.params_mut(), &g);
    }
    let score = |set: &[Vec<f64>]| -> Result<f64, LearnError> {
        let mut s = 0.0;
        for x in set {
            s += disc.forward(x)?[0];
        }
        Ok(s / set.len() as f64)
    };
    Ok(DiscStats {
        loss: discriminator_loss(disc, real, fake)?,
        mean_real: score(real)?,
        mean_fake: score(fake)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gae_lambda_zero_is_td_error() {
        let r = [1.0, 0.5, -0.2, 2.0];
        let v = [0.3, 0.1, 0.7, -0.4];
        let d = [false, false, true, false];
        let (a, ret) = gae(&r, &v, &d, 0.9, 0.99, 0.0).unwrap();
        let next = [v[1], v[2], 0.0, 0.9];
        for t in 0..4 {
            let live = if d[t] { 0.0 } else { 1.0 };
            assert!((a[t] - (r[t] + 0.99 * next[t] * live - v[t])).abs() < 1e-15);
            assert!((ret[t] - a[t] - v[t]).abs() < 1e-15);
        }
    }

    #[test]
    fn gae_undiscounted_suffix_sums() {
        let r = [1.0, 2.0, 3.0];
        let (a, _) = gae(&r, &[0.0; 3], &[false, false, true], 0.0, 1.0, 1.0).unwrap();
        assert_eq!(a, vec![6.0, 5.0, 3.0]);
    }

    #[test]
    fn gae_hand_recursion() {
        let (a, ret) = gae(&[1.0; 3], &[0.5; 3], &[false, false, true], 0.0, 0.9, 0.95).unwrap();
        let expected = [2.127_762_5, 1.3775, 0.5];
        for t in 0..3 {
            assert!((a[t] - expected[t]).abs() < 1e-12, "{t}: {}", a[t]);
            assert!((ret[t] - expected[t] - 0.5).abs() < 1e-12);
        }
        assert!(matches!(gae(&[1.0; 3], &[0.5; 2], &[false; 3], 0.0, 0.9, 0.9), Err(LearnError::LengthMismatch { .. })));
    }

    #[test]
    fn advantage_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a: Vec<f64> = (0..257).map(|_| rng.random_range(-5.0..20.0)).collect();
        normalize_advantages(&mut a);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        let sd = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
        assert!(mean.abs() <= 1e-9);
        assert!((sd - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn normalizer_matches_batch_statistics() {
        let data: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let mut a = Normalizer::new(2);
        a.update(&data[..3]);
        a.update(&data[3..]);
        let mut b = Normalizer::new(2);
        b.update(&data);
        for j in 0..2 {
            assert!((a.mean[j] - b.mean[j]).abs() < 1e-12);
            assert!((a.var[j] - b.var[j]).abs() < 1e-9);
        }
        assert!((b.mean[0] - 4.5).abs() < 1e-12 && (b.var[0] - 8.25).abs() < 1e-12);
    }

    fn policy(rng: &mut ChaCha8Rng) -> GaussianPolicy {
        GaussianPolicy { mean: Mlp::init(&[3, 8, 2], 1.0, rng).unwrap(), log_std: vec![-0.3, 0.2] }
    }

    #[test]
    fn log_prob_gradient_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let pol = policy(&mut rng);
            let obs: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let act: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = pol.log_prob_grad(&obs, &act).unwrap();
            let base = pol.flat_params();
            for i in 0..base.len() {
                let h = 1e-5;
                let eval = |d: f64| {
                    let mut p = pol.clone();
                    let mut q = base.clone();
                    q[i] += d;
                    p.set_flat_params(&q);
                    p.log_prob(&obs, &act).unwrap()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
                assert!(err <= 1e-4, "{i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn discriminator_gradient_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let disc = Mlp::init(&[4, 6, 1], 1.0, &mut rng).unwrap();
            let set = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
                (0..5).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
            };
            let (real, fake) = (set(&mut rng), set(&mut rng));
            let g = discriminator_grad(&disc, &real, &fake).unwrap();
            for i in 0..disc.params().len() {
                let h = 1e-5;
                let eval = |d: f64| {
                    let mut p = disc.clone();
                    p.params_mut()[i] += d;
                    discriminator_loss(&p, &real, &fake).unwrap()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
                assert!(err <= 1e-4, "{i}: {fd} vs {}", g[i]);
            }
        }
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig { epochs: 3, minibatch_size: 8, ..TrainConfig::default() }
    }

    #[test]
    fn zero_advantages_leave_policy_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pol = policy(&mut rng);
        let mut value = Mlp::init(&[3, 8, 1], 1.0, &mut rng).unwrap();
        let cfg = small_cfg();
        let mut opt = PpoOptimizers::new(&pol, &value, &cfg);
        let mut batch = Batch::default();
        for _ in 0..20 {
            let o: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (a, lp) = pol.sample(&o, &mut rng).unwrap();
            batch.obs.push(o);
            batch.actions.push(a);
            batch.log_probs.push(lp);
            batch.advantages.push(0.0);
            batch.returns.push(1.0);
        }
        let before = pol.clone();
        let stats = ppo_update(&mut pol, &mut value, &mut opt, &batch, &cfg, &mut rng).unwrap();
        assert_eq!(pol, before);
        assert_eq!(stats.clip_fraction, 0.0);
    }

    #[test]
    fn first_epoch_ratio_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pol = policy(&mut rng);
        for _ in 0..50 {
            let o: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (a, lp) = pol.sample(&o, &mut rng).unwrap();
            assert!((pol.log_prob(&o, &a).unwrap() - lp).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_loss_restores_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut pol = policy(&mut rng);
        let mut value = Mlp::init(&[3, 8, 1], 1.0, &mut rng).unwrap();
        let cfg = small_cfg();
        let mut opt = PpoOptimizers::new(&pol, &value, &cfg);
        let batch = Batch {
            obs: vec![vec![0.1, 0.2, 0.3]; 4],
            actions: vec![vec![0.0, 0.0]; 4],
            log_probs: vec![0.0; 4],
            advantages: vec![1.0, -1.0, 1.0, -1.0],
            returns: vec![f64::NAN; 4],
        };
        let (p0, v0, o0) = (pol.clone(), value.clone(), opt.clone());
        assert!(matches!(
            ppo_update(&mut pol, &mut value, &mut opt, &batch, &cfg, &mut rng),
            Err(LearnError::NonFiniteLoss)
        ));
        assert_eq!((pol, value, opt), (p0, v0, o0));
    }

    #[test]
    fn bandit_probability_rises() {
        // one state, two actions decoded by the sign of a 1-D Gaussian sample
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut pol = GaussianPolicy { mean: Mlp::zeros(&[1, 1]).unwrap(), log_std: vec![0.0] };
        let mut value = Mlp::zeros(&[1, 1]).unwrap();
        let cfg = TrainConfig { epochs: 4, minibatch_size: 64, policy_lr: 0.01, ..TrainConfig::default() };
        let mut opt = PpoOptimizers::new(&pol, &value, &cfg);
        let prob = |p: &GaussianPolicy| {
            let mu = p.mean.forward(&[1.0]).unwrap()[0];
            let sd = p.log_std[0].exp();
            // P(a > 0) by midpoint integration of the density
            let steps = 4000;
            let (lo, hi) = (0.0, mu + 10.0 * sd);
            let h = (hi - lo) / steps as f64;
            (0..steps)
                .map(|k| {
                    let x = lo + (k as f64 + 0.5) * h;
                    (-(x - mu).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()) * h
                })
                .sum::<f64>()
        };
        let mut last = prob(&pol);
        for _ in 0..100 {
            let mut batch = Batch::default();
            let mut rewards = Vec::new();
            for _ in 0..64 {
                let (a, lp) = pol.sample(&[1.0], &mut rng).unwrap();
                rewards.push(if a[0] > 0.0 { 1.0 } else { 0.0 });
                batch.obs.push(vec![1.0]);
                batch.actions.push(a);
                batch.log_probs.push(lp);
            }
            let values: Vec<f64> = batch.obs.iter().map(|o| value.forward(o).unwrap()[0]).collect();
            let (mut adv, ret) = gae(&rewards, &values, &vec![true; 64], 0.0, 0.99, 0.95).unwrap();
            normalize_advantages(&mut adv);
            batch.advantages = adv;
            batch.returns = ret;
            ppo_update(&mut pol, &mut value, &mut opt, &batch, &cfg, &mut rng).unwrap();
            let p = prob(&pol);
            assert!(p >= last - 1e-3, "probability dropped from {last} to {p}");
            last = last.max(p);
        }
        assert!(last > 0.95, "{last}");
    }

    #[test]
    fn discriminator_separates_and_balances() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let real: Vec<Vec<f64>> = (0..64).map(|_| vec![rng.random_range(0.5..1.0), rng.random_range(-0.2..0.2)]).collect();
        let fake: Vec<Vec<f64>> = (0..64).map(|_| vec![rng.random_range(-1.0..-0.5), rng.random_range(-0.2..0.2)]).collect();
        let mut disc = Mlp::init(&[2, 16, 1], 1.0, &mut rng).unwrap();
        let mut opt = Adam::new(disc.params().len(), 1e-2);
        let s = train_discriminator(&mut disc, &mut opt, &real, &fake, 200, 32, &mut rng).unwrap();
        assert!(s.mean_real > s.mean_fake + 1.0);

        let mut disc = Mlp::init(&[2, 16, 1], 1.0, &mut rng).unwrap();
        let mut opt = Adam::new(disc.params().len(), 1e-2);
        let s = train_discriminator(&mut disc, &mut opt, &real, &real, 300, 64, &mut rng).unwrap();
        assert!(s.mean_real.abs() < 0.05, "{}", s.mean_real);
        let r = crate::reward::amp_reward(s.mean_real);
        assert!((r - 0.75).abs() < 0.05);

        assert!(matches!(
            train_discriminator(&mut disc, &mut opt, &real, &[], 1, 8, &mut rng),
            Err(LearnError::DimensionMismatch { .. })
        ));
    }
}
