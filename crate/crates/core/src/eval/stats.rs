use super::EvalError;

/// Samples up to this combined size get exact p-values.
pub const EXACT_MAX_TOTAL: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValueMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u_a: f64,
    pub u_b: f64,
    pub p_two_sided: f64,
    pub method: PValueMethod,
}

impl MannWhitney {
    /// `1` if the first sample tends to rank higher, `-1` if lower, `0` if
    /// neither.
    pub fn direction(&self) -> i8 {
        match self.u_a.partial_cmp(&self.u_b) {
            Some(std::cmp::Ordering::Greater) => 1,
            Some(std::cmp::Ordering::Less) => -1,
            _ => 0,
        }
    }
}

/// Pooled midranks, doubled so they are integers, plus tie group sizes.
struct Ranking {
    doubled_a: Vec<u64>,
    doubled_all: Vec<u64>,
    tie_sizes: Vec<usize>,
}

fn rank(a: &[f64], b: &[f64]) -> Result<Ranking, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let mut pooled: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut doubled_a = Vec::with_capacity(a.len());
    let mut doubled_all = Vec::with_capacity(pooled.len());
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share the midrank (i + j + 2) / 2
        let doubled = (i + j + 2) as u64;
        for item in &pooled[i..=j] {
            doubled_all.push(doubled);
            if item.1 {
                doubled_a.push(doubled);
            }
        }
        tie_sizes.push(j - i + 1);
        i = j + 1;
    }
    Ok(Ranking {
        doubled_a,
        doubled_all,
        tie_sizes,
    })
}

fn u_statistics(r: &Ranking, na: usize, nb: usize) -> (f64, f64) {
    let rank_sum_a = r.doubled_a.iter().sum::<u64>() as f64 / 2.0;
    let u_a = rank_sum_a - (na * (na + 1)) as f64 / 2.0;
    (u_a, (na * nb) as f64 - u_a)
}

/// Exact two-sided p-value: the share of all `C(na + nb, na)` assignments of
/// the pooled midranks to the first sample whose U is at least as far from
/// its mean as the observed one.
pub fn mann_whitney_exact(a: &[f64], b: &[f64]) -> Result<MannWhitney, EvalError> {
    let r = rank(a, b)?;
    let (na, nb) = (a.len(), b.len());
    let (u_a, u_b) = u_statistics(&r, na, nb);
    let max_sum: u64 = r.doubled_all.iter().sum();
    let width = max_sum as usize + 1;
    // ways[k][s]: subsets of size k with doubled rank sum s
    let mut ways = vec![vec![0f64; width]; na + 1];
    ways[0][0] = 1.0;
    for &d in &r.doubled_all {
        let d = d as usize;
        for k in (1..=na).rev() {
            let (lower, upper) = ways.split_at_mut(k);
            let (src, dst) = (&lower[k - 1], &mut upper[0]);
            for s in (d..width).rev() {
                if src[s - d] != 0.0 {
                    dst[s] += src[s - d];
                }
            }
        }
    }
    // doubled U - doubled mean = S - na(na+1) - na*nb, in integers
    let offset = (na * (na + 1) + na * nb) as i64;
    let observed = (r.doubled_a.iter().sum::<u64>() as i64 - offset).abs();
    let total: f64 = ways[na].iter().sum();
    let extreme: f64 = ways[na]
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as i64 - offset).abs() >= observed)
        .map(|(_, w)| w)
        .sum();
    Ok(MannWhitney {
        u_a,
        u_b,
        p_two_sided: (extreme / total).min(1.0),
        method: PValueMethod::Exact,
    })
}

fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Normal approximation with tie and continuity corrections.
pub fn mann_whitney_normal(a: &[f64], b: &[f64]) -> Result<MannWhitney, EvalError> {
    let r = rank(a, b)?;
    let (na, nb) = (a.len(), b.len());
    let (u_a, u_b) = u_statistics(&r, na, nb);
    let n = (na + nb) as f64;
    let ties: f64 = r.tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum();
    let variance = if n > 1.0 {
        (na * nb) as f64 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)))
    } else {
        0.0
    };
    let mean = (na * nb) as f64 / 2.0;
    let p = if variance <= 0.0 {
        1.0
    } else {
        let z = ((u_a - mean).abs() - 0.5).max(0.0) / variance.sqrt();
        (2.0 * normal_sf(z)).min(1.0)
    };
    Ok(MannWhitney {
        u_a,
        u_b,
        p_two_sided: p,
        method: PValueMethod::Normal,
    })
}

/// Exact p when the combined size is at most 20, normal approximation above.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, EvalError> {
    if a.len() + b.len() <= EXACT_MAX_TOTAL {
        mann_whitney_exact(a, b)
    } else {
        mann_whitney_normal(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Midranks by counting, then every subset of pooled positions.
    fn oracle(a: &[f64], b: &[f64]) -> (f64, f64) {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let midrank = |v: f64| {
            let below = pooled.iter().filter(|&&x| x < v).count() as f64;
            let equal = pooled.iter().filter(|&&x| x == v).count() as f64;
            below + (equal + 1.0) / 2.0
        };
        let ranks: Vec<f64> = pooled.iter().map(|&v| midrank(v)).collect();
        let na = a.len();
        let u_of = |sum: f64| sum - (na * (na + 1)) as f64 / 2.0;
        let u_obs = u_of(ranks[..na].iter().sum());
        let mean = (na * b.len()) as f64 / 2.0;
        let (mut hits, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << pooled.len()) {
            if mask.count_ones() as usize != na {
                continue;
            }
            let s: f64 = (0..pooled.len()).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            total += 1;
            if (u_of(s) - mean).abs() >= (u_obs - mean).abs() - 1e-9 {
                hits += 1;
            }
        }
        (u_obs, hits as f64 / total as f64)
    }

    #[test]
    fn separated_pairs() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.u_a, 0.0);
        assert!((r.p_two_sided - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.direction(), -1);
    }

    #[test]
    fn identical_samples() {
        let a = [0.3, 0.1, 0.7, 0.7];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.u_a, 8.0);
        assert_eq!(r.u_b, 8.0);
        assert_eq!(r.p_two_sided, 1.0);
        assert_eq!(r.direction(), 0);
    }

    #[test]
    fn errors() {
        assert!(matches!(mann_whitney_u(&[], &[1.0]), Err(EvalError::EmptyInput)));
        assert!(matches!(mann_whitney_u(&[f64::NAN], &[1.0]), Err(EvalError::NonFinite)));
    }

    #[test]
    fn all_tied_normal() {
        let r = mann_whitney_normal(&[1.0; 15], &[1.0; 15]).unwrap();
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn normal_close_to_exact_on_ten() {
        let a = [0.12, 0.45, 0.33, 0.91, 0.27];
        let b = [0.55, 0.74, 0.62, 0.18, 0.88];
        let e = mann_whitney_exact(&a, &b).unwrap().p_two_sided;
        let n = mann_whitney_normal(&a, &b).unwrap().p_two_sided;
        assert!((e - n).abs() < 0.02, "exact {e} normal {n}");
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration(
            a in prop::collection::vec(0i32..6, 1..6),
            b in prop::collection::vec(0i32..6, 1..6),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let (u, p) = oracle(&a, &b);
            let r = mann_whitney_exact(&a, &b).unwrap();
            prop_assert_eq!(r.u_a, u);
            prop_assert!((r.p_two_sided - p).abs() < 1e-12);
        }

        #[test]
        fn symmetric(
            a in prop::collection::vec(-5.0f64..5.0, 1..15),
            b in prop::collection::vec(-5.0f64..5.0, 1..15),
        ) {
            let ab = mann_whitney_u(&a, &b).unwrap();
            let ba = mann_whitney_u(&b, &a).unwrap();
            prop_assert!((ab.p_two_sided - ba.p_two_sided).abs() < 1e-12);
            prop_assert_eq!(ab.u_a + ab.u_b, (a.len() * b.len()) as f64);
            prop_assert_eq!(ab.u_a, ba.u_b);
        }
    }
}
