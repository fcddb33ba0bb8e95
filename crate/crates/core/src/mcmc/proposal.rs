//! Integer random-walk proposal for latent counts.

use rand::Rng;

/// A proposed latent count with forward and reverse log proposal masses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZProposal {
    pub proposal: u64,
    pub log_forward: f64,
    pub log_reverse: f64,
}

/// Inclusive support of the proposal from current value `v` given report `y`.
fn support(v: u64, y: u64) -> (u64, u64) {
    match v {
        0 => (0, 1),
        1 if y > 0 => (1, 2),
        1 => (0, 2),
        _ => {
            let half = v.div_ceil(2);
            (v - half, v + half)
        }
    }
}

/// `log g(u | v)`; `-inf` when `u` cannot be proposed from `v`.
pub fn z_proposal_log_prob(u: u64, v: u64, y: u64) -> f64 {
    let (lo, hi) = support(v, y);
    if (lo..=hi).contains(&u) {
        -(((hi - lo + 1) as f64).ln())
    } else {
        f64::NEG_INFINITY
    }
}

/// Draw `u ~ g(· | v)`. A reverse mass of `-inf` means the move must be
/// rejected.
pub fn propose_z<R: Rng + ?Sized>(v: u64, y: u64, rng: &mut R) -> ZProposal {
    let (lo, hi) = support(v, y);
    let u = rng.random_range(lo..=hi);
    ZProposal {
        proposal: u,
        log_forward: -(((hi - lo + 1) as f64).ln()),
        log_reverse: z_proposal_log_prob(v, u, y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prob(u: u64, v: u64, y: u64) -> f64 {
        z_proposal_log_prob(u, v, y).exp()
    }

    #[test]
    fn four_cases() {
        assert_eq!((prob(0, 0, 0), prob(1, 0, 0), prob(2, 0, 0)), (0.5, 0.5, 0.0));
        assert_eq!((prob(0, 1, 3), prob(1, 1, 3), prob(2, 1, 3)), (0.0, 0.5, 0.5));
        for u in 0..=2 {
            assert!((prob(u, 1, 0) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(prob(3, 1, 0), 0.0);
        for u in 2..=8 {
            assert!((prob(u, 5, 1) - 1.0 / 7.0).abs() < 1e-15);
        }
        assert_eq!((prob(1, 5, 1), prob(9, 5, 1)), (0.0, 0.0));
    }

    #[test]
    fn asymmetric() {
        assert_eq!(prob(2, 1, 1), 0.5);
        assert!((prob(1, 2, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(prob(5, 2, 1), 0.0);
    }

    #[test]
    fn masses_sum_to_one_and_never_leave_positive_reports_at_zero() {
        for y in [0, 1, 7] {
            for v in 0..200u64 {
                if y > 0 && v == 0 {
                    continue;
                }
                let total: f64 = (0..400).map(|u| prob(u, v, y)).sum();
                assert!((total - 1.0).abs() < 1e-12, "v={v} y={y}");
                if y > 0 {
                    assert_eq!(prob(0, v, y), 0.0);
                }
            }
        }
    }

    #[test]
    fn draws_match_masses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0u32; 9];
        let n = 70_000;
        for _ in 0..n {
            let p = propose_z(5, 2, &mut rng);
            assert_eq!(p.log_forward, z_proposal_log_prob(p.proposal, 5, 2));
            assert_eq!(p.log_reverse, z_proposal_log_prob(5, p.proposal, 2));
            counts[p.proposal as usize] += 1;
        }
        for (u, &c) in counts.iter().enumerate().skip(2) {
            let f = c as f64 / n as f64;
            assert!((f - 1.0 / 7.0).abs() < 0.006, "u={u} f={f}");
        }
    }
}
