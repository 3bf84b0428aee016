//! Quantile distribution algebra: fractions, the asymmetric Huber loss,
//! atom pooling and truncation, and the four target-distribution strategies.

use crate::error::{Error, Result};

/// One pooled atom with the index of the critic that predicted it.
/// Provenance is diagnostic only and never affects training math.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaggedAtom {
    pub value: f64,
    pub critic: usize,
}

/// Midpoint quantile fractions `tau_m = (2m - 1) / (2M)`.
pub fn quantile_fractions(m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidArgument("M must be >= 1".into()));
    }
    Ok((1..=m)
        .map(|i| (2 * i - 1) as f64 / (2 * m) as f64)
        .collect())
}

/// Asymmetric Huber loss `|tau - 1{u<0}| * L_H(u)` with threshold `kappa`.
pub fn huber_quantile_loss(u: f64, tau: f64, kappa: f64) -> f64 {
    let weight = if u < 0.0 { 1.0 - tau } else { tau };
    let huber = if u.abs() <= kappa {
        0.5 * u * u
    } else {
        kappa * (u.abs() - 0.5 * kappa)
    };
    weight * huber
}

/// Derivative of [`huber_quantile_loss`] with respect to `u`.
pub fn huber_quantile_loss_du(u: f64, tau: f64, kappa: f64) -> f64 {
    let weight = if u < 0.0 { 1.0 - tau } else { tau };
    weight * u.clamp(-kappa, kappa)
}

/// Pools the atoms of all critics (critic-major order) and stable-sorts them
/// ascending, so value ties keep lowest-critic-first order.
pub fn pool_atoms(atom_vectors: &[Vec<f64>]) -> Vec<TaggedAtom> {
    let mut pool: Vec<TaggedAtom> = atom_vectors
        .iter()
        .enumerate()
        .flat_map(|(n, atoms)| atoms.iter().map(move |&value| TaggedAtom { value, critic: n }))
        .collect();
    pool.sort_by(|a, b| a.value.partial_cmp(&b.value).expect("finite atoms"));
    pool
}

/// Keeps the `(M - d) * N` smallest atoms of the pooled union.
pub fn pool_and_truncate(atom_vectors: &[Vec<f64>], d: usize) -> Result<Vec<TaggedAtom>> {
    let n = atom_vectors.len();
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one critic".into()));
    }
    let m = atom_vectors[0].len();
    if atom_vectors.iter().any(|a| a.len() != m) {
        return Err(Error::InvalidArgument("atom vectors of unequal length".into()));
    }
    if d >= m {
        return Err(Error::InvalidArgument(format!(
            "d = {d} must be smaller than M = {m}"
        )));
    }
    let mut pool = pool_atoms(atom_vectors);
    pool.truncate((m - d) * n);
    Ok(pool)
}

/// Maps next-state atoms to TD target atoms:
/// `y_i = r + gamma * (z_i - alpha * logp_next)`, or `y_i = r` on terminal
/// transitions. Preserves input order.
pub fn build_target_atoms(
    r: f64,
    done: bool,
    gamma: f64,
    kept_atoms: &[f64],
    alpha: f64,
    logp_next: f64,
) -> Vec<f64> {
    if done {
        return vec![r; kept_atoms.len()];
    }
    kept_atoms
        .iter()
        .map(|&z| r + gamma * (z - alpha * logp_next))
        .collect()
}

/// How the TD target distribution is assembled from the `N` target critics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetStrategy {
    /// Truncate the pooled mixture to its `(M - d) * N` smallest atoms.
    TruncatePooled { d: usize },
    /// Truncate each critic to its `M - d` smallest atoms, then pool.
    PoolTruncated { d: usize },
    /// Each critic trains on its own `M - d` smallest atoms.
    PerCritic { d: usize },
    /// Clipped-double analogue: full atom set of the critic with the lowest
    /// mean value.
    ArgminCritic,
}

impl TargetStrategy {
    pub fn parse(name: &str, d: usize) -> Result<Self> {
        match name {
            "tqc" => Ok(Self::TruncatePooled { d }),
            "ptqb" => Ok(Self::PoolTruncated { d }),
            "tqb" => Ok(Self::PerCritic { d }),
            "qb" => Ok(Self::ArgminCritic),
            other => Err(Error::InvalidArgument(format!(
                "unknown target strategy '{other}' (expected tqc, ptqb, tqb, or qb)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::TruncatePooled { .. } => "tqc",
            Self::PoolTruncated { .. } => "ptqb",
            Self::PerCritic { .. } => "tqb",
            Self::ArgminCritic => "qb",
        }
    }

    pub fn dropped_per_critic(&self) -> usize {
        match *self {
            Self::TruncatePooled { d } | Self::PoolTruncated { d } | Self::PerCritic { d } => d,
            Self::ArgminCritic => 0,
        }
    }
}

/// Target atom sets produced for one transition: one entry per trained
/// critic. Shared strategies clone the same set into every slot. For the
/// pooled-truncation strategy, `dropped_per_critic` counts how many of the
/// `d * N` dropped atoms came from each critic.
#[derive(Debug, Clone)]
pub struct TargetSets {
    pub per_critic: Vec<Vec<f64>>,
    pub dropped_per_critic: Vec<usize>,
}

/// Builds the TD target distribution(s) from the target critics' atoms at
/// `(s', a')`.
pub fn build_target_distribution(
    strategy: TargetStrategy,
    target_critic_atoms: &[Vec<f64>],
    r: f64,
    done: bool,
    gamma: f64,
    alpha: f64,
    logp_next: f64,
) -> Result<TargetSets> {
    let n = target_critic_atoms.len();
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one critic".into()));
    }
    let m = target_critic_atoms[0].len();
    let shift = |atoms: &[f64]| build_target_atoms(r, done, gamma, atoms, alpha, logp_next);

    match strategy {
        TargetStrategy::TruncatePooled { d } => {
            let kept = pool_and_truncate(target_critic_atoms, d)?;
            let mut kept_per_critic = vec![0usize; n];
            for atom in &kept {
                kept_per_critic[atom.critic] += 1;
            }
            let dropped: Vec<usize> = kept_per_critic.iter().map(|&k| m - k).collect();
            let values: Vec<f64> = kept.iter().map(|a| a.value).collect();
            let set = shift(&values);
            Ok(TargetSets {
                per_critic: vec![set; n],
                dropped_per_critic: dropped,
            })
        }
        TargetStrategy::PoolTruncated { d } => {
            if d >= m {
                return Err(Error::InvalidArgument(format!(
                    "d = {d} must be smaller than M = {m}"
                )));
            }
            let mut pooled = Vec::with_capacity((m - d) * n);
            for atoms in target_critic_atoms {
                let mut own = atoms.clone();
                own.sort_by(|a, b| a.partial_cmp(b).expect("finite atoms"));
                own.truncate(m - d);
                pooled.extend(own);
            }
            let set = shift(&pooled);
            Ok(TargetSets {
                per_critic: vec![set; n],
                dropped_per_critic: vec![d; n],
            })
        }
        TargetStrategy::PerCritic { d } => {
            if d >= m {
                return Err(Error::InvalidArgument(format!(
                    "d = {d} must be smaller than M = {m}"
                )));
            }
            let per_critic = target_critic_atoms
                .iter()
                .map(|atoms| {
                    let mut own = atoms.clone();
                    own.sort_by(|a, b| a.partial_cmp(b).expect("finite atoms"));
                    own.truncate(m - d);
                    shift(&own)
                })
                .collect();
            Ok(TargetSets {
                per_critic,
                dropped_per_critic: vec![d; n],
            })
        }
        TargetStrategy::ArgminCritic => {
            let mut best = 0;
            let mut best_mean = f64::INFINITY;
            for (i, atoms) in target_critic_atoms.iter().enumerate() {
                let mean = mean_of_atoms(atoms)?;
                if mean < best_mean {
                    best_mean = mean;
                    best = i;
                }
            }
            let set = shift(&target_critic_atoms[best]);
            Ok(TargetSets {
                per_critic: vec![set; n],
                dropped_per_critic: vec![0; n],
            })
        }
    }
}

/// Quantile Huber critic loss:
/// `1/(|target| * M) * sum_m sum_i rho_{tau_m}(y_i - theta_m)`.
pub fn critic_loss(predicted: &[f64], target: &[f64], fractions: &[f64], kappa: f64) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("empty target atom set".into()));
    }
    if predicted.len() != fractions.len() {
        return Err(Error::ShapeMismatch {
            expected: fractions.len(),
            got: predicted.len(),
        });
    }
    let scale = 1.0 / (target.len() * predicted.len()) as f64;
    let mut loss = 0.0;
    for (&theta, &tau) in predicted.iter().zip(fractions) {
        for &y in target {
            loss += huber_quantile_loss(y - theta, tau, kappa);
        }
    }
    Ok(loss * scale)
}

/// Gradient of [`critic_loss`] with respect to each predicted atom.
pub fn critic_loss_grad(
    predicted: &[f64],
    target: &[f64],
    fractions: &[f64],
    kappa: f64,
) -> Result<Vec<f64>> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("empty target atom set".into()));
    }
    if predicted.len() != fractions.len() {
        return Err(Error::ShapeMismatch {
            expected: fractions.len(),
            got: predicted.len(),
        });
    }
    let scale = 1.0 / (target.len() * predicted.len()) as f64;
    Ok(predicted
        .iter()
        .zip(fractions)
        .map(|(&theta, &tau)| {
            let mut g = 0.0;
            for &y in target {
                // d/dtheta rho(y - theta) = -rho'(u) at u = y - theta
                g -= huber_quantile_loss_du(y - theta, tau, kappa);
            }
            g * scale
        })
        .collect())
}

pub fn mean_of_atoms(atoms: &[f64]) -> Result<f64> {
    if atoms.is_empty() {
        return Err(Error::InvalidArgument("empty atom set".into()));
    }
    Ok(atoms.iter().sum::<f64>() / atoms.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_are_bin_midpoints() {
        assert_eq!(quantile_fractions(1).unwrap(), vec![0.5]);
        assert_eq!(quantile_fractions(2).unwrap(), vec![0.25, 0.75]);
        let f25 = quantile_fractions(25).unwrap();
        assert!((f25[0] - 0.02).abs() < 1e-15);
        assert!((f25[24] - 0.98).abs() < 1e-15);
        assert!(f25.windows(2).all(|w| w[0] < w[1]));
        assert!(quantile_fractions(0).is_err());
    }

    #[test]
    fn huber_quantile_values() {
        assert_eq!(huber_quantile_loss(0.0, 0.5, 1.0), 0.0);
        // tau=0.5, u=2: 0.5 * (2 - 0.5) = 0.75
        assert!((huber_quantile_loss(2.0, 0.5, 1.0) - 0.75).abs() < 1e-15);
        // tau=0.9, u=-0.5: 0.1 * 0.125 = 0.0125
        assert!((huber_quantile_loss(-0.5, 0.9, 1.0) - 0.0125).abs() < 1e-15);
    }

    #[test]
    fn huber_grad_matches_fd() {
        for &(u, tau, kappa) in &[(0.5, 0.3, 1.0), (-0.7, 0.9, 1.0), (2.5, 0.1, 1.0), (-3.0, 0.6, 2.0)] {
            let h = 1e-6;
            let fd = (huber_quantile_loss(u + h, tau, kappa) - huber_quantile_loss(u - h, tau, kappa)) / (2.0 * h);
            assert!((huber_quantile_loss_du(u, tau, kappa) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn pool_truncate_examples() {
        let atoms = vec![vec![1.0, 3.0, 5.0], vec![2.0, 4.0, 6.0]];
        let kept: Vec<f64> = pool_and_truncate(&atoms, 1)
            .unwrap()
            .iter()
            .map(|a| a.value)
            .collect();
        assert_eq!(kept, vec![1.0, 2.0, 3.0, 4.0]);

        let all: Vec<f64> = pool_and_truncate(&atoms, 0)
            .unwrap()
            .iter()
            .map(|a| a.value)
            .collect();
        assert_eq!(all, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

        let ties = vec![vec![7.0, 7.0], vec![7.0, 7.0]];
        let kept = pool_and_truncate(&ties, 1).unwrap();
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|a| a.value == 7.0));
        // stable sort keeps lowest critic index first
        assert_eq!(kept[0].critic, 0);

        assert!(pool_and_truncate(&atoms, 3).is_err());
    }

    #[test]
    fn target_atom_shift() {
        let y = build_target_atoms(1.0, false, 0.99, &[2.0], 0.0, 0.0);
        assert!((y[0] - 2.98).abs() < 1e-12);

        let y = build_target_atoms(5.0, true, 0.99, &[1.0, 2.0, 3.0], 0.3, -1.0);
        assert_eq!(y, vec![5.0, 5.0, 5.0]);

        // r=0, gamma=0.99, z=1, alpha=0.2, logp=-1 -> 0.99 * 1.2
        let y = build_target_atoms(0.0, false, 0.99, &[1.0], 0.2, -1.0);
        assert!((y[0] - 1.188).abs() < 1e-12);
    }

    #[test]
    fn strategies_on_spec_examples() {
        let r = 0.0;
        let gamma = 1.0;
        let go = |s: TargetStrategy, atoms: &[Vec<f64>]| {
            build_target_distribution(s, atoms, r, false, gamma, 0.0, 0.0).unwrap()
        };

        // interleaved atoms: TQC and PTQB coincide
        let a = vec![vec![1.0, 3.0, 5.0], vec![2.0, 4.0, 6.0]];
        let tqc = go(TargetStrategy::TruncatePooled { d: 1 }, &a);
        let ptqb = go(TargetStrategy::PoolTruncated { d: 1 }, &a);
        assert_eq!(tqc.per_critic[0], vec![1.0, 2.0, 3.0, 4.0]);
        let mut p = ptqb.per_critic[0].clone();
        p.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(p, vec![1.0, 2.0, 3.0, 4.0]);

        let b = vec![vec![1.0, 2.0, 6.0], vec![3.0, 4.0, 5.0]];
        let tqc = go(TargetStrategy::TruncatePooled { d: 1 }, &b);
        let ptqb = go(TargetStrategy::PoolTruncated { d: 1 }, &b);
        assert_eq!(tqc.per_critic[0], vec![1.0, 2.0, 3.0, 4.0]);
        let mut p = ptqb.per_critic[0].clone();
        p.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(p, vec![1.0, 2.0, 3.0, 4.0]);

        // skewed atoms: the two strategies diverge
        let c = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 9.0]];
        let tqc = go(TargetStrategy::TruncatePooled { d: 1 }, &c);
        let ptqb = go(TargetStrategy::PoolTruncated { d: 1 }, &c);
        assert_eq!(tqc.per_critic[0], vec![1.0, 2.0, 3.0, 4.0]);
        let mut p = ptqb.per_critic[0].clone();
        p.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(p, vec![1.0, 2.0, 4.0, 5.0]);

        // argmin-critic picks the lower-mean critic's full atom set
        let d = vec![vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0]];
        let qb = go(TargetStrategy::ArgminCritic, &d);
        assert_eq!(qb.per_critic[0], vec![1.0, 2.0, 3.0]);

        // per-critic truncation keeps each critic's own smallest atoms
        let tqb = go(TargetStrategy::PerCritic { d: 1 }, &a);
        assert_eq!(tqb.per_critic[0], vec![1.0, 3.0]);
        assert_eq!(tqb.per_critic[1], vec![2.0, 4.0]);
    }

    #[test]
    fn tqc_drop_counts_attribute_to_critics() {
        let atoms = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 9.0]];
        let sets = build_target_distribution(
            TargetStrategy::TruncatePooled { d: 1 },
            &atoms,
            0.0,
            false,
            1.0,
            0.0,
            0.0,
        )
        .unwrap();
        // kept {1,2,3,4}: critic 0 lost 0 atoms, critic 1 lost 2
        assert_eq!(sets.dropped_per_critic, vec![0, 2]);
    }

    #[test]
    fn critic_loss_examples() {
        let taus = quantile_fractions(1).unwrap();
        assert_eq!(critic_loss(&[0.0], &[0.0], &taus, 1.0).unwrap(), 0.0);
        // predicted 0, target 1, tau 0.5: 0.5 * 0.5 * 1^2 / 2... = 0.25
        let l = critic_loss(&[0.0], &[1.0], &taus, 1.0).unwrap();
        assert!((l - 0.25).abs() < 1e-15);
        assert!(critic_loss(&[0.0], &[], &taus, 1.0).is_err());
    }

    #[test]
    fn critic_loss_matches_brute_force() {
        // random 3x4 case against an independent double loop
        let predicted = [0.3, -1.1, 2.0];
        let target = [0.5, 0.0, -0.7, 1.9];
        let taus = quantile_fractions(3).unwrap();
        let kappa = 1.0;
        let mut expected = 0.0;
        for (m, &theta) in predicted.iter().enumerate() {
            for &y in &target {
                let u: f64 = y - theta;
                let w = (taus[m] - if u < 0.0 { 1.0 } else { 0.0 }).abs();
                let h = if u.abs() <= kappa { 0.5 * u * u } else { kappa * (u.abs() - 0.5 * kappa) };
                expected += w * h;
            }
        }
        expected /= (target.len() * predicted.len()) as f64;
        let got = critic_loss(&predicted, &target, &taus, kappa).unwrap();
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn critic_loss_grad_matches_fd() {
        let predicted = vec![0.3, -1.1, 2.0];
        let target = [0.5, 0.0, -0.7, 1.9];
        let taus = quantile_fractions(3).unwrap();
        let grad = critic_loss_grad(&predicted, &target, &taus, 1.0).unwrap();
        let h = 1e-6;
        for i in 0..predicted.len() {
            let mut p = predicted.clone();
            p[i] += h;
            let lp = critic_loss(&p, &target, &taus, 1.0).unwrap();
            p[i] -= 2.0 * h;
            let lm = critic_loss(&p, &target, &taus, 1.0).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((grad[i] - fd).abs() < 1e-7, "atom {i}: {} vs {}", grad[i], fd);
        }
    }

    #[test]
    fn mean_and_truncated_mean() {
        assert_eq!(mean_of_atoms(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(mean_of_atoms(&[4.2, 4.2]).unwrap(), 4.2);
        assert!(mean_of_atoms(&[]).is_err());

        let atoms = vec![vec![1.0, 3.0, 5.0], vec![2.0, 4.0, 6.0]];
        let kept: Vec<f64> = pool_and_truncate(&atoms, 1)
            .unwrap()
            .iter()
            .map(|a| a.value)
            .collect();
        let truncated = mean_of_atoms(&kept).unwrap();
        assert!((truncated - 2.5).abs() < 1e-15);
        assert!(truncated <= 3.5);
    }
}
